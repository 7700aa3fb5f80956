use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde_json::{json, Value};

use protoattn::bench::{run_suite, to_csv, to_svg, BenchConfig};
use protoattn::gmm::{build_prototypes, EmConfig, EmInit, ValueMode};
use protoattn::instance::AttentionMode;
use protoattn::io::{read_bank, read_fmap, read_protos, write_fmap, write_pgm, write_protos};
use protoattn::pcam::{aggregate, reconstruct_all, MemoryBank};
use protoattn::synth::{export_sequence, generate_sequence, run_tracker, Association, SceneConfig, TrackerParams};
use protoattn::{CostDims, FeatureMap, Mechanism};

use crate::config::FileConfig;
use crate::error::CliError;

/// Settings shared by every subcommand after flags and file are merged.
pub struct Context {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub file: FileConfig,
}

/// What a command reports: JSON for `--json`, text lines otherwise.
pub struct Report {
    pub json: Value,
    pub lines: Vec<String>,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Attaches `path` to a library error without changing its class.
fn at<T>(path: &Path, r: protoattn::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Numeric(m) => CliError::Numeric(format!("{}: {m}", path.display())),
    })
}

fn parse<T: std::str::FromStr<Err = protoattn::Error>>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(CliError::from)
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Key map (.fmap) to cluster.
    pub input: PathBuf,
    /// Value map pooled into value prototypes; defaults to the key map.
    #[arg(long)]
    pub values: Option<PathBuf>,
    #[arg(long)]
    pub protos: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// subsample, farthest or warm.
    #[arg(long)]
    pub init: Option<String>,
    /// Prototype file (.pcap) whose means seed EM when `--init warm`.
    #[arg(long)]
    pub warm: Option<PathBuf>,
    /// literal, normalized or hard.
    #[arg(long)]
    pub value_mode: Option<String>,
}

pub fn cluster(ctx: &Context, args: &ClusterArgs) -> Result<Report, CliError> {
    let sec = Some("cluster");
    let f = &ctx.file;
    let keys = at(&args.input, read_fmap(&args.input))?;
    let values = match &args.values {
        Some(p) => at(p, read_fmap(p))?,
        None => keys.clone(),
    };
    let init_name = match (&args.init, f.string(sec, "init")?, &args.warm) {
        (Some(s), _, _) => s.clone(),
        (None, Some(s), _) => s,
        (None, None, Some(_)) => "warm".into(),
        (None, None, None) => "subsample".into(),
    };
    let mut sigma2 = args.sigma2.or(f.f64(sec, "sigma2")?);
    let mut protos = args.protos.or(f.usize(sec, "protos")?);
    let init = match init_name.as_str() {
        "subsample" => EmInit::SeededSubsample,
        "farthest" => EmInit::FarthestPoint,
        "warm" => {
            let path = args.warm.as_ref().ok_or_else(|| CliError::Usage("--init warm needs --warm <file>".into()))?;
            let warm = at(path, read_protos(path))?;
            sigma2 = sigma2.or(Some(warm.sigma2()));
            protos = protos.or(Some(warm.n_protos()));
            EmInit::WarmStart(warm.key_means().clone())
        }
        other => return Err(CliError::Usage(format!("unknown init '{other}'"))),
    };
    let config = EmConfig {
        n_protos: protos.unwrap_or(protoattn::gmm::DEFAULT_FRAME_PROTOS),
        sigma2: sigma2.unwrap_or(protoattn::gmm::DEFAULT_SIGMA2),
        n_iters: args.iters.or(f.usize(sec, "iters")?).unwrap_or(protoattn::gmm::DEFAULT_EM_ITERS),
        init,
        seed: ctx.seed,
    };
    let mode: ValueMode = parse(&args.value_mode.clone().or(f.string(sec, "value_mode")?).unwrap_or("normalized".into()))?;
    if !keys.same_grid(&values) {
        return Err(CliError::Usage("key and value maps have different grids".into()));
    }
    let (set, trace) = build_prototypes(&keys.to_matrix(), &values.to_matrix(), &config, mode)?;
    fs::create_dir_all(&ctx.out_dir).map_err(|e| CliError::io(&ctx.out_dir, e))?;
    let protos_path = ctx.out_dir.join("protos.pcap");
    write_protos(&protos_path, &set)?;
    write_json(&ctx.out_dir.join("trace.json"), &json!({ "likelihood_trace": trace }))?;
    Ok(Report {
        json: json!({
            "protos": protos_path,
            "n_protos": set.n_protos(),
            "likelihood_trace": trace,
        }),
        lines: vec![
            format!("wrote {} ({} prototypes)", protos_path.display(), set.n_protos()),
            format!("final log-likelihood {:.6}", trace.last().copied().unwrap_or(f64::NAN)),
        ],
    })
}

#[derive(Debug, Args)]
pub struct AttendArgs {
    /// Query key map (.fmap).
    pub query: PathBuf,
    /// Directory of per-frame prototype files (*.pcap, read in name order)
    /// or a bank snapshot (.pcab).
    #[arg(long)]
    pub bank: PathBuf,
    /// Current frame's value map (.fmap).
    #[arg(long)]
    pub values: PathBuf,
}

pub fn load_bank(path: &Path) -> Result<MemoryBank, CliError> {
    if path.is_file() {
        return at(path, read_bank(path));
    }
    let snapshot = path.join("bank.pcab");
    if snapshot.is_file() {
        return at(&snapshot, read_bank(&snapshot));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| CliError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pcap"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("{}: no prototype files in bank", path.display())));
    }
    let mut bank = MemoryBank::new(files.len())?;
    for (i, p) in files.iter().enumerate() {
        bank.push_frame(at(p, read_protos(p))?, i as u64)?;
    }
    Ok(bank)
}

pub fn attend(ctx: &Context, args: &AttendArgs) -> Result<Report, CliError> {
    let query = at(&args.query, read_fmap(&args.query))?;
    let values = at(&args.values, read_fmap(&args.values))?;
    let bank = load_bank(&args.bank)?;
    if bank.is_empty() {
        return Err(CliError::Usage("memory bank is empty".into()));
    }
    let result = aggregate(&reconstruct_all(&bank, &query)?, &values)?;
    let weights = FeatureMap::from_matrix(values.height(), values.width(), result.weights.clone())?;
    fs::create_dir_all(&ctx.out_dir).map_err(|e| CliError::io(&ctx.out_dir, e))?;
    let (ybar_path, weights_path) = (ctx.out_dir.join("ybar.fmap"), ctx.out_dir.join("weights.fmap"));
    write_fmap(&ybar_path, &result.y_bar)?;
    write_fmap(&weights_path, &weights)?;
    Ok(Report {
        json: json!({ "ybar": ybar_path, "weights": weights_path, "bank_frames": bank.indices() }),
        lines: vec![format!("read {} memory frames; wrote {} and {}", bank.len(), ybar_path.display(), weights_path.display())],
    })
}

#[derive(Debug, Args, Clone, Default)]
pub struct SceneArgs {
    /// Full scene description as JSON; replaces the crossing-pair preset.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Frame side length of the crossing-pair preset.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

fn scene_config(ctx: &Context, args: &SceneArgs, seed: u64) -> Result<SceneConfig, CliError> {
    let sec = Some("scene");
    let f = &ctx.file;
    if let Some(path) = &args.scene {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: SceneConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.seed = cfg.seed.wrapping_add(seed.wrapping_sub(ctx.seed));
        return Ok(cfg);
    }
    match f.string(sec, "preset")?.as_deref() {
        None | Some("crossing") => {}
        Some(other) => return Err(CliError::Usage(format!("unknown scene preset '{other}'"))),
    }
    let size = args.size.or(f.usize(sec, "size")?).unwrap_or(32);
    let frames = args.frames.or(f.usize(sec, "frames")?).unwrap_or(16);
    let noise = args.noise.or(f.f64(sec, "noise")?).unwrap_or(0.3);
    let cfg = SceneConfig::crossing_pair(seed, size, frames, noise);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Memory capacities to run, comma separated; one output set each.
    #[arg(long, value_delimiter = ',')]
    pub capacity: Vec<usize>,
    #[arg(long)]
    pub no_instance_protos: bool,
    /// Boundary erosion fraction of the initial masks.
    #[arg(long)]
    pub erosion: Option<f64>,
    /// Run this many consecutive scene seeds and write only a summary.
    #[arg(long)]
    pub sweep: Option<u64>,
}

fn tracker_params(ctx: &Context, args: &TrackArgs) -> Result<TrackerParams, CliError> {
    let sec = Some("tracker");
    let f = &ctx.file;
    let mut p = match f.string(sec, "preset")?.as_deref() {
        None | Some("synthetic") => TrackerParams::synthetic(),
        Some("generic") => TrackerParams::default(),
        Some(other) => return Err(CliError::Usage(format!("unknown tracker preset '{other}'"))),
    };
    macro_rules! set {
        ($field:ident, $getter:ident) => {
            if let Some(v) = f.$getter(sec, stringify!($field))? {
                p.$field = v;
            }
        };
    }
    set!(key_dim, usize);
    set!(value_dim, usize);
    set!(projection_seed, u64);
    set!(frame_protos, usize);
    set!(em_iters, usize);
    set!(sigma2, f64);
    set!(instance_protos_pos, usize);
    set!(instance_protos_neg, usize);
    set!(instance_em_iters, usize);
    set!(instance_sigma2, f64);
    set!(momentum, f64);
    set!(bg_factor, f64);
    set!(fuse_a, f64);
    set!(fuse_b, f64);
    set!(initial_logit, f64);
    set!(assoc_iou, f64);
    set!(assoc_appearance, f64);
    set!(appearance_weight, f64);
    if let Some(v) = f.bool(sec, "instance_protos")? {
        p.use_instance_protos = v;
    }
    if let Some(v) = f.f64(sec, "erosion")? {
        p.corruption.erosion = v;
    }
    if let Some(v) = f.usize(sec, "dilation")? {
        p.corruption.dilation = v;
    }
    if let Some(v) = f.f64(sec, "dropout")? {
        p.corruption.dropout = v;
    }
    p.attention_mode = match f.string(sec, "attention")?.as_deref() {
        None => p.attention_mode,
        Some("joint") => AttentionMode::Joint,
        Some("separate") => AttentionMode::Separate,
        Some(other) => return Err(CliError::Usage(format!("unknown attention mode '{other}'"))),
    };
    p.association = match f.string(sec, "association")?.as_deref() {
        None => p.association,
        Some("greedy") => Association::Greedy,
        Some("exhaustive") => Association::Exhaustive,
        Some(other) => return Err(CliError::Usage(format!("unknown association '{other}'"))),
    };
    if args.no_instance_protos {
        p.use_instance_protos = false;
    }
    if let Some(e) = args.erosion {
        p.corruption.erosion = e;
    }
    p.seed = ctx.seed;
    p.validate()?;
    Ok(p)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => xs[n / 2],
        _ => 0.5 * (xs[n / 2 - 1] + xs[n / 2]),
    }
}

pub fn track(ctx: &Context, args: &TrackArgs) -> Result<Report, CliError> {
    let base = tracker_params(ctx, args)?;
    let capacities = match (&args.capacity[..], ctx.file.usize_list(Some("tracker"), "capacity")?) {
        ([], None) => vec![base.capacity],
        ([], Some(caps)) => caps,
        (caps, _) => caps.to_vec(),
    };
    let sweep = args.sweep.or(ctx.file.u64(Some("tracker"), "sweep")?);
    fs::create_dir_all(&ctx.out_dir).map_err(|e| CliError::io(&ctx.out_dir, e))?;
    let mut json_out = serde_json::Map::new();
    let mut lines = Vec::new();

    if let Some(n) = sweep {
        if n == 0 {
            return Err(CliError::Usage("--sweep needs at least one seed".into()));
        }
        let seeds: Vec<u64> = (0..n).map(|i| ctx.seed.wrapping_add(i)).collect();
        for &cap in &capacities {
            let params = TrackerParams { capacity: cap, ..base.clone() };
            let runs: Vec<Value> = seeds
                .par_iter()
                .map(|&s| -> Result<Value, CliError> {
                    let out = run_tracker(&scene_config(ctx, &args.scene, s)?, &TrackerParams { seed: s, ..params.clone() })?;
                    Ok(json!({ "seed": s, "metrics": out.metrics, "initial_metrics": out.initial_metrics }))
                })
                .collect::<Result<_, _>>()?;
            let ious: Vec<f64> = runs.iter().map(|r| r["metrics"]["mean_iou"].as_f64().unwrap_or(f64::NAN)).collect();
            let switches: u64 = runs.iter().map(|r| r["metrics"]["id_switches"].as_u64().unwrap_or(0)).sum();
            let summary = json!({ "median_iou": median(ious.clone()), "id_switches": switches, "runs": runs });
            write_json(&ctx.out_dir.join(format!("sweep_cap{cap}.json")), &summary)?;
            lines.push(format!("capacity {cap}: median IoU {:.4} over {n} seeds, {switches} id switches", median(ious)));
            json_out.insert(format!("cap{cap}"), summary);
        }
        return Ok(Report { json: Value::Object(json_out), lines });
    }

    let scene = scene_config(ctx, &args.scene, ctx.seed)?;
    let seq = generate_sequence(&scene)?;
    for &cap in &capacities {
        let params = TrackerParams { capacity: cap, ..base.clone() };
        let out = protoattn::synth::run_tracker_on(&seq, &params)?;
        write_json(&ctx.out_dir.join(format!("track_cap{cap}.json")), &out)?;
        write_json(&ctx.out_dir.join(format!("metrics_cap{cap}.json")), &out.metrics)?;
        let mask_dir = ctx.out_dir.join(format!("masks_cap{cap}"));
        fs::create_dir_all(&mask_dir).map_err(|e| CliError::io(&mask_dir, e))?;
        for frame in &out.frames {
            for t in &frame.tracks {
                write_pgm(mask_dir.join(format!("frame_{:04}_track_{}.pgm", frame.frame, t.track_id)), &t.mask)?;
            }
        }
        lines.push(format!(
            "capacity {cap}: mean IoU {:.4} (initial {:.4}), {} id switches",
            out.metrics.mean_iou, out.initial_metrics.mean_iou, out.metrics.id_switches
        ));
        json_out.insert(format!("cap{cap}"), json!({ "metrics": out.metrics, "initial_metrics": out.initial_metrics }));
    }
    Ok(Report { json: Value::Object(json_out), lines })
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// pca, nonlocal, mhsa; comma separated.
    #[arg(long, value_delimiter = ',')]
    pub mechanisms: Vec<String>,
    /// Tube lengths, comma separated.
    #[arg(long = "t", value_delimiter = ',')]
    pub t: Vec<u64>,
    #[arg(long)]
    pub h: Option<u64>,
    #[arg(long)]
    pub w: Option<u64>,
    #[arg(long)]
    pub d: Option<u64>,
    #[arg(long)]
    pub c_v: Option<u64>,
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub em_iters: Option<u64>,
    #[arg(long)]
    pub heads: Option<u64>,
    /// Also execute the kernels with operation counting.
    #[arg(long)]
    pub instrumented: bool,
}

pub fn bench(ctx: &Context, args: &BenchArgs) -> Result<Report, CliError> {
    let sec = Some("bench");
    let f = &ctx.file;
    let mechanisms: Vec<String> = if args.mechanisms.is_empty() {
        f.string_list(sec, "mechanisms")?.unwrap_or_else(|| vec!["pca".into(), "nonlocal".into(), "mhsa".into()])
    } else {
        args.mechanisms.clone()
    };
    let mechanisms: Vec<Mechanism> = mechanisms.iter().map(|m| parse(m)).collect::<Result<_, _>>()?;
    let ts = if args.t.is_empty() { f.u64_list(sec, "t")?.unwrap_or(vec![2, 4, 8]) } else { args.t.clone() };
    let r = CostDims::reference(0);
    let pick = |flag: Option<u64>, key: &str, default: u64| -> Result<u64, CliError> {
        Ok(flag.or(f.u64(sec, key)?).unwrap_or(default))
    };
    let base = CostDims {
        h: pick(args.h, "h", r.h)?,
        w: pick(args.w, "w", r.w)?,
        t: 0,
        d: pick(args.d, "d", r.d)?,
        c_v: pick(args.c_v, "c_v", r.c_v)?,
        n: pick(args.n, "n", r.n)?,
        em_iters: pick(args.em_iters, "em_iters", r.em_iters)?,
        heads: pick(args.heads, "heads", r.heads)?,
    };
    let config = BenchConfig {
        mechanisms,
        dims: ts.iter().map(|&t| CostDims { t, ..base }).collect(),
        instrumented: args.instrumented || f.bool(sec, "instrumented")?.unwrap_or(false),
        seed: ctx.seed,
    };
    let rows = run_suite(&config)?;
    fs::create_dir_all(&ctx.out_dir).map_err(|e| CliError::io(&ctx.out_dir, e))?;
    let (csv_path, svg_path) = (ctx.out_dir.join("bench.csv"), ctx.out_dir.join("bench.svg"));
    write_text(&csv_path, &to_csv(&rows))?;
    write_text(&svg_path, &to_svg(&rows))?;
    Ok(Report {
        json: json!({ "csv": csv_path, "svg": svg_path, "rows": rows }),
        lines: vec![format!("{} rows; wrote {} and {}", rows.len(), csv_path.display(), svg_path.display())],
    })
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
}

pub fn synth(ctx: &Context, args: &SynthArgs) -> Result<Report, CliError> {
    let scene = scene_config(ctx, &args.scene, ctx.seed)?;
    let seq = generate_sequence(&scene)?;
    export_sequence(&seq, &ctx.out_dir)?;
    write_json(&ctx.out_dir.join("scene.json"), &scene)?;
    Ok(Report {
        json: json!({ "out_dir": ctx.out_dir, "frames": seq.n_frames(), "objects": seq.gt_ids.len() }),
        lines: vec![format!("wrote {} frames of {} objects to {}", seq.n_frames(), seq.gt_ids.len(), ctx.out_dir.display())],
    })
}
