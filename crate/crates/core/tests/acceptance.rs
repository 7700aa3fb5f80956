//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::time::{Duration, Instant};

use protoattn::bench::{measure_nonlocal, measure_pca};
use protoattn::cost::{mhsa_cost, nonlocal_cost, nonlocal_matmul_multiplies, pca_cost};
use protoattn::gmm::{log_likelihood, posterior, value_prototypes};
use protoattn::instance::{extract_fg_bg, fit_instance_protos, instance_attention_maps, propagate, DEFAULT_MOMENTUM};
use protoattn::pcam::ReconstructedFrame;
use protoattn::synth::tracker::TrackOutput;
use protoattn::synth::{run_tracker, SceneConfig, TrackerParams};
use protoattn::{
    aggregate, attend, build_prototypes, fit_gmm, nonlocal_attend, CostDims, EmConfig, EmInit, FeatureMap,
    InstanceTrack, KernelSpec, MaskMap, Matrix, PrototypeSet, RngStream, ValueMode,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("took {took:.2?}, budget {budget:?}"))
}

fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::new(rows, cols, rng.normal_vec(rows * cols).into_iter().map(|x| x * scale).collect()).unwrap()
}

fn log_uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    rng.uniform_range(lo.ln(), hi.ln()).exp()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn posterior_normalization() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = 1 + rng.below(60);
        let n = 1 + rng.below(12);
        let d = 1 + rng.below(10);
        let scale = log_uniform(&mut rng, 0.01, 100.0);
        let sigma2 = log_uniform(&mut rng, 1e-3, 1e3);
        let keys = random_matrix(&mut rng, m, d, scale);
        let means = random_matrix(&mut rng, n, d, scale);
        let a = posterior(&keys, &means, sigma2).map_err(|e| e.to_string())?;
        for i in 0..m {
            let row = a.posteriors.row(i);
            ensure(row.iter().all(|p| p.is_finite() && *p >= 0.0), || format!("bad row {row:?}"))?;
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("row sum off by {worst:e}"))?;
    within_budget(start, Duration::from_secs(1))?;
    Ok(format!("max |row sum - 1| = {worst:.1e}"))
}

/// Direct evaluation of `Σ_i log( (1/N) Σ_j (2πσ²)^(-D/2) exp(-‖k_i - μ_j‖²/2σ²) )`.
fn naive_log_likelihood(keys: &Matrix, means: &Matrix, sigma2: f64) -> f64 {
    let d = keys.cols() as f64;
    let norm = (2.0 * std::f64::consts::PI * sigma2).powf(-0.5 * d) / means.rows() as f64;
    (0..keys.rows())
        .map(|i| {
            let p: f64 = (0..means.rows())
                .map(|j| {
                    let d2: f64 = keys.row(i).iter().zip(means.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-d2 / (2.0 * sigma2)).exp()
                })
                .sum();
            (norm * p).ln()
        })
        .sum()
}

fn em_monotonicity() -> Outcome {
    let start = Instant::now();
    let mut worst_drop = 0.0f64;
    for seed in 0..100u64 {
        let n = [2, 4, 8][(seed % 3) as usize];
        let mut rng = RngStream::new(1000 + seed);
        let keys = random_matrix(&mut rng, 64, 8, 1.0);
        let cfg = EmConfig::new(n, 0.5, 6).with_seed(seed);
        let fit = fit_gmm(&keys, &cfg).map_err(|e| e.to_string())?;
        let trace = &fit.likelihood_trace;
        ensure(trace.len() == 7, || format!("seed {seed}: trace has {} entries", trace.len()))?;
        for w in trace.windows(2) {
            let drop = (w[0] - w[1]) / w[0].abs().max(1.0);
            worst_drop = worst_drop.max(drop);
            ensure(drop <= 1e-9, || format!("seed {seed}: likelihood fell {} -> {}", w[0], w[1]))?;
        }
        let oracle = naive_log_likelihood(&keys, &fit.key_means, 0.5);
        let last = *trace.last().unwrap();
        ensure((oracle - last).abs() <= 1e-9 * oracle.abs(), || {
            format!("seed {seed}: final likelihood {last} but direct evaluation gives {oracle}")
        })?;
        let recomputed = log_likelihood(&keys, &fit.key_means, 0.5).map_err(|e| e.to_string())?;
        ensure(recomputed == last, || format!("seed {seed}: trace tail differs from a fresh evaluation"))?;
    }
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!("largest relative drop {worst_drop:.1e}"))
}

fn value_conservation() -> Outcome {
    let mut rng = RngStream::new(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = 1 + rng.below(80);
        let n = 1 + rng.below(10);
        let d = 1 + rng.below(6);
        let cv = 1 + rng.below(6);
        let sigma2 = log_uniform(&mut rng, 0.01, 10.0);
        let keys = random_matrix(&mut rng, m, d, 1.0);
        let values = random_matrix(&mut rng, m, cv, 3.0);
        let means = random_matrix(&mut rng, n, d, 1.0);
        let a = posterior(&keys, &means, sigma2).map_err(|e| e.to_string())?;
        let protos = value_prototypes(&a, &values, ValueMode::Literal).map_err(|e| e.to_string())?;
        for c in 0..cv {
            let pooled: f64 = (0..n).map(|j| protos.get(j, c)).sum();
            let direct: f64 = (0..m).map(|i| values.get(i, c)).sum();
            worst = worst.max((pooled - direct).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("channel totals differ by {worst:e}"))?;
    Ok(format!("max channel gap {worst:.1e}"))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d = 1 + rng.below(6);
        let cv = 1 + rng.below(6);
        let sigma2 = log_uniform(&mut rng, 0.05, 5.0);
        let mem_keys = FeatureMap::random(8, 8, d, &mut rng);
        let mem_values = FeatureMap::random(8, 8, cv, &mut rng);
        let query = FeatureMap::random(8, 8, d, &mut rng);
        let cfg = EmConfig::new(64, sigma2, 0).with_init(EmInit::WarmStart(mem_keys.to_matrix()));
        let (protos, _) = build_prototypes(&mem_keys.to_matrix(), &mem_values.to_matrix(), &cfg, ValueMode::Hard)
            .map_err(|e| e.to_string())?;
        let pca = attend(&query, &protos).map_err(|e| e.to_string())?;
        let dense = nonlocal_attend(&query, &[mem_keys], &[mem_values], KernelSpec::Gaussian { sigma2 })
            .map_err(|e| e.to_string())?;
        for (a, b) in pca.data().iter().zip(dense.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("per-pixel gap {worst:e}"))?;
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!("max per-pixel gap {worst:.1e}"))
}

fn micro_case() -> Outcome {
    let close = |got: f64, want: f64, tol: f64, what: &str| {
        ensure((got - want).abs() <= tol, || format!("{what}: got {got}, want {want} ± {tol}"))
    };
    // Hand evaluation: the key at 0 has logits 0 and -1/(2·0.5) = -1.
    let p0 = 1.0 / (1.0 + (-1.0f64).exp());
    close(p0, 0.73106, 1e-5, "oracle p0")?;
    let col = |xs: &[f64]| Matrix::new(xs.len(), 1, xs.to_vec()).unwrap();
    let keys = col(&[0.0, 1.0]);
    let values = col(&[10.0, 20.0]);
    let means = col(&[0.0, 1.0]);
    let a = posterior(&keys, &means, 0.5).map_err(|e| e.to_string())?;
    close(a.posteriors.get(0, 0), 0.73106, 1e-5, "p(z=0 | k=0)")?;
    close(a.posteriors.get(0, 1), 0.26894, 1e-5, "p(z=1 | k=0)")?;
    let v = value_prototypes(&a, &values, ValueMode::Literal).map_err(|e| e.to_string())?;
    close(v.get(0, 0), 10.0 * p0 + 20.0 * (1.0 - p0), 1e-12, "v0 vs hand value")?;
    close(v.get(0, 0), 12.689, 1e-3, "v0")?;
    close(v.get(1, 0), 17.311, 1e-3, "v1")?;
    let protos = PrototypeSet::new(means, v, 0.5).map_err(|e| e.to_string())?;
    let q = FeatureMap::new(1, 1, 1, vec![0.5]).unwrap();
    let y = attend(&q, &protos).map_err(|e| e.to_string())?.data()[0];
    close(y, 15.0, 1e-3, "attend at 0.5")?;
    Ok(format!("posteriors [{:.5}, {:.5}], output {y:.4}", a.posteriors.get(0, 0), a.posteriors.get(0, 1)))
}

fn aggregation() -> Outcome {
    let mut rng = RngStream::new(6);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (1 + rng.below(6), 1 + rng.below(6));
        let cv = 1 + rng.below(5);
        let t = rng.below(5);
        let current = FeatureMap::random(h, w, cv, &mut rng).scale(3.0);
        let recons: Vec<ReconstructedFrame> = (0..t)
            .map(|i| ReconstructedFrame { y: FeatureMap::random(h, w, cv, &mut rng).scale(3.0), source_index: i as u64 })
            .collect();
        let r = aggregate(&recons, &current).map_err(|e| e.to_string())?;
        for p in 0..h * w {
            worst = worst.max((r.weights.row(p).iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("weight rows off by {worst:e}"))?;
    let current = FeatureMap::new(1, 1, 1, vec![1.0]).unwrap();
    let recon = ReconstructedFrame { y: FeatureMap::new(1, 1, 1, vec![3.0]).unwrap(), source_index: 0 };
    let y = aggregate(&[recon], &current).map_err(|e| e.to_string())?.y_bar.data()[0];
    // Logits 1·3 and 1·1.
    let w3 = 1.0 / (1.0 + (-2.0f64).exp());
    let oracle = 3.0 * w3 + (1.0 - w3);
    ensure((y - oracle).abs() <= 1e-12 && (y - 2.7616).abs() <= 1e-3, || format!("scalar case gives {y}"))?;
    Ok(format!("max |Σw - 1| = {worst:.1e}, scalar ȳ = {y:.4}"))
}

fn random_protos(rng: &mut RngStream, n: usize, d: usize) -> PrototypeSet {
    let keys = random_matrix(rng, n, d, 1.0);
    PrototypeSet::new(keys.clone(), keys, 0.5).unwrap()
}

fn momentum_contract() -> Outcome {
    let mut rng = RngStream::new(7);
    for _ in 0..20 {
        let (n, d) = (1 + rng.below(5), 1 + rng.below(5));
        let prev_fg = random_protos(&mut rng, n, d);
        let prev_bg = random_protos(&mut rng, n, d);
        let cur_fg = random_protos(&mut rng, n, d);
        let cur_bg = random_protos(&mut rng, n, d);
        let track = |lambda| InstanceTrack::new(1, prev_fg.clone(), prev_bg.clone(), lambda, 0).unwrap();
        let keep = propagate(&track(0.0), &cur_fg, &cur_bg, 1).map_err(|e| e.to_string())?;
        ensure(keep.fg_protos == prev_fg && keep.bg_protos == prev_bg, || "λ=0 changed the prototypes".into())?;
        let swap = propagate(&track(1.0), &cur_fg, &cur_bg, 1).map_err(|e| e.to_string())?;
        ensure(
            swap.fg_protos.key_means() == cur_fg.key_means() && swap.bg_protos.key_means() == cur_bg.key_means(),
            || "λ=1 did not replace the prototypes".into(),
        )?;
    }
    ensure(DEFAULT_MOMENTUM == 0.2, || format!("default momentum is {DEFAULT_MOMENTUM}"))?;
    ensure(TrackerParams::default().momentum == 0.2, || "tracker default momentum differs".into())?;
    Ok("λ=0 identity, λ=1 replacement, default 0.2".into())
}

fn fg_bg_partition() -> Outcome {
    let mut rng = RngStream::new(8);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (6 + rng.below(10), 6 + rng.below(10));
        let d = 1 + rng.below(6);
        let keys = FeatureMap::random(h, w, d, &mut rng);
        let (y0, x0) = (rng.below(h / 2), rng.below(w / 2));
        let (y1, x1) = (y0 + 2 + rng.below(h / 2 - 1), x0 + 2 + rng.below(w / 2 - 1));
        let mask = MaskMap::from_fn(h, w, |y, x| (y0..y1).contains(&y) && (x0..x1).contains(&x));
        let (fg, bg) = extract_fg_bg(&keys, &mask, 2.0).map_err(|e| e.to_string())?;
        let sigma2 = log_uniform(&mut rng, 0.01, 10.0);
        let seed = rng.below(1 << 20) as u64;
        let cfg_pos = EmConfig::new((1 + rng.below(4)).min(fg.rows()), sigma2, 3).with_seed(seed);
        let cfg_neg = EmConfig::new((1 + rng.below(4)).min(bg.rows()), sigma2, 3).with_seed(seed + 1);
        let (pf, pb) = fit_instance_protos(&fg, &bg, &cfg_pos, &cfg_neg, None).map_err(|e| e.to_string())?;
        let attn = instance_attention_maps(&keys, &pf, &pb).map_err(|e| e.to_string())?;
        for y in 0..h {
            for x in 0..w {
                worst = worst.max((attn.fg_map.get(y, x) + attn.bg_map.get(y, x) - 1.0).abs());
            }
        }
    }
    ensure(worst <= 1e-9, || format!("fg + bg off by {worst:e}"))?;
    Ok(format!("max |fg + bg - 1| = {worst:.1e}"))
}

fn random_dims(rng: &mut RngStream) -> CostDims {
    let h = 2 + rng.below(6) as u64;
    let w = 2 + rng.below(6) as u64;
    CostDims {
        h,
        w,
        t: 1 + rng.below(4) as u64,
        d: 1 + rng.below(6) as u64,
        c_v: 1 + rng.below(6) as u64,
        n: 1 + rng.below((h * w).min(8) as usize) as u64,
        em_iters: rng.below(4) as u64,
        heads: 1,
    }
}

fn pca_multiplies(dims: CostDims) -> Result<u64, String> {
    pca_cost(dims).map(|r| r.analytic_multiplies).map_err(|e| e.to_string())
}

fn cost_scaling() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(9);
    for i in 0..20 {
        let dims = random_dims(&mut rng);
        let pca = pca_cost(dims).map_err(|e| e.to_string())?;
        let measured = measure_pca(dims, i).map_err(|e| e.to_string())?;
        ensure(measured.multiplies == pca.analytic_multiplies && measured.exps == pca.analytic_exps, || {
            format!("pca {dims:?}: measured {measured:?}, analytic {pca:?}")
        })?;
        let nl = nonlocal_cost(dims).map_err(|e| e.to_string())?;
        let measured = measure_nonlocal(dims, i).map_err(|e| e.to_string())?;
        ensure(measured.multiplies == nl.analytic_multiplies && measured.exps == nl.analytic_exps, || {
            format!("nonlocal {dims:?}: measured {measured:?}, analytic {nl:?}")
        })?;

        // Everything but the aggregation term is linear in T and in N.
        let agg = |d: CostDims| 2 * d.pixels() * (d.t + 1) * d.c_v;
        let base = pca_multiplies(dims)?;
        let t2 = CostDims { t: 2 * dims.t, ..dims };
        ensure(pca_multiplies(t2)? - agg(t2) == 2 * (base - agg(dims)), || format!("pca not linear in T at {dims:?}"))?;
        let n2 = CostDims { n: 2 * dims.n, ..dims };
        if n2.n <= n2.pixels() {
            ensure(pca_multiplies(n2)? - agg(n2) == 2 * (base - agg(dims)), || {
                format!("pca not linear in N at {dims:?}")
            })?;
        }
        let hw2 = CostDims { h: 2 * dims.h, w: 2 * dims.w, ..dims };
        let (a, b) = (
            nonlocal_matmul_multiplies(dims).map_err(|e| e.to_string())?,
            nonlocal_matmul_multiplies(hw2).map_err(|e| e.to_string())?,
        );
        ensure(b == 16 * a, || format!("nonlocal matmul {a} -> {b} under 2× H, W"))?;
    }
    let mut rows = Vec::new();
    for t in [2, 4, 8] {
        let dims = CostDims::reference(t);
        let p = pca_multiplies(dims)?;
        let n = nonlocal_cost(dims).map_err(|e| e.to_string())?.analytic_multiplies;
        let m = mhsa_cost(dims).map_err(|e| e.to_string())?.analytic_multiplies;
        ensure(p < n && n < m, || format!("T={t}: pca {p}, nonlocal {n}, mhsa {m}"))?;
        ensure(t != 8 || 4 * p < n, || format!("T=8: pca {p} is not under a quarter of nonlocal {n}"))?;
        rows.push(format!("T={t} {:.1}/{:.1}/{:.1} GMul", p as f64 / 1e9, n as f64 / 1e9, m as f64 / 1e9));
    }
    within_budget(start, Duration::from_secs(10))?;
    Ok(rows.join(", "))
}

fn suite_scene(seed: u64) -> SceneConfig {
    SceneConfig::crossing_pair(seed, 32, 16, 0.3)
}

fn toy_pipeline() -> Outcome {
    let start = Instant::now();
    let run = |seed: u64, capacity: usize, instance: bool| {
        let params = TrackerParams { seed, capacity, use_instance_protos: instance, ..TrackerParams::synthetic() };
        run_tracker(&suite_scene(seed), &params).map_err(|e| e.to_string())
    };
    let (mut fused, mut initial, mut short, mut diffs) = (vec![], vec![], vec![], vec![]);
    let (mut switches_on, mut switches_off) = (0, 0);
    for seed in 0..20 {
        let full = run(seed, 32, true)?;
        let one = run(seed, 1, true)?;
        let plain = run(seed, 32, false)?;
        fused.push(full.metrics.mean_iou);
        initial.push(full.initial_metrics.mean_iou);
        short.push(one.metrics.mean_iou);
        diffs.push(full.metrics.mean_iou - one.metrics.mean_iou);
        switches_on += full.metrics.id_switches;
        switches_off += plain.metrics.id_switches;
    }
    let (mf, mi, ms) = (median(&fused), median(&initial), median(&short));
    ensure(mf >= mi + 0.02, || format!("(a) fused median {mf:.4} vs initial {mi:.4}"))?;
    ensure(switches_on <= switches_off, || format!("(b) switches {switches_on} with, {switches_off} without"))?;
    let worst = diffs.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(worst >= -0.01, || format!("(c) capacity 32 loses {:.4} IoU on some seed", -worst))?;
    ensure(mf > ms, || format!("(c) capacity 32 median {mf:.4} vs capacity 1 {ms:.4}"))?;
    within_budget(start, Duration::from_secs(120))?;
    Ok(format!(
        "median IoU fused {mf:.4} / initial {mi:.4} / cap-1 {ms:.4}, switches {switches_on} vs {switches_off}, worst seed gap {worst:+.4}"
    ))
}

fn determinism_and_causality() -> Outcome {
    let bytes = |out: &TrackOutput| serde_json::to_vec(out).unwrap();
    let params = TrackerParams { seed: 11, ..TrackerParams::synthetic() };
    let scene = SceneConfig::crossing_pair(11, 24, 10, 0.3);
    let a = run_tracker(&scene, &params).map_err(|e| e.to_string())?;
    let b = run_tracker(&scene, &params).map_err(|e| e.to_string())?;
    ensure(bytes(&a) == bytes(&b), || "tracker reruns differ".into())?;

    let mut rng = RngStream::new(12);
    let keys = random_matrix(&mut rng, 200, 4, 1.0);
    let values = random_matrix(&mut rng, 200, 3, 1.0);
    let cfg = EmConfig::new(8, 0.5, 6).with_seed(12);
    let p1 = build_prototypes(&keys, &values, &cfg, ValueMode::Literal).map_err(|e| e.to_string())?;
    let p2 = build_prototypes(&keys, &values, &cfg, ValueMode::Literal).map_err(|e| e.to_string())?;
    let bits = |p: &(PrototypeSet, Vec<f64>)| {
        let mut v: Vec<u64> = p.0.key_means().as_slice().iter().map(|x| x.to_bits()).collect();
        v.extend(p.0.value_protos().as_slice().iter().map(|x| x.to_bits()));
        v.extend(p.1.iter().map(|x| x.to_bits()));
        v
    };
    ensure(bits(&p1) == bits(&p2), || "prototype reruns differ".into())?;

    for t in [1, 4, 7] {
        let cut = SceneConfig { n_frames: t, ..scene.clone() };
        let part = run_tracker(&cut, &params).map_err(|e| e.to_string())?;
        ensure(part.frames.len() == t, || format!("truncated run has {} frames", part.frames.len()))?;
        let same = serde_json::to_vec(&part.frames).unwrap() == serde_json::to_vec(&a.frames[..t]).unwrap();
        ensure(same, || format!("truncation at {t} changed earlier frames"))?;
    }
    Ok("tracker and prototype reruns identical; cuts at 1, 4, 7 frames match the full run".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("posterior normalization", posterior_normalization),
        ("EM monotonicity", em_monotonicity),
        ("literal value conservation", value_conservation),
        ("oracle equivalence with dense attention", oracle_equivalence),
        ("hand-derived micro-case", micro_case),
        ("aggregation weights and scalar case", aggregation),
        ("momentum contract", momentum_contract),
        ("fg/bg partition", fg_bg_partition),
        ("cost scaling", cost_scaling),
        ("toy pipeline direction", toy_pipeline),
        ("determinism and causality", determinism_and_causality),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({took:.2?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({took:.2?}): {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
