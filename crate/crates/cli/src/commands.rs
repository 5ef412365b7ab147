//! One function per subcommand. Each returns the fields of its summary line.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use serde_json::{json, Value};
use wsd_avatar::synth::load_pose;
use wsd_avatar::{fit_identity_with, generate_dataset, unet_init, AnchorMap, FitData, Frame, Manifest, Template};
use wsd_diffusion::{sample_record, train, Checkpoint, Denoiser, SampleConfig, Schedule};
use wsd_metrics::{evaluate, ProbeConfig, ProbeSet};
use wsd_splat::Camera;
use wsd_weights::{load_pack, load_record, save_pack, save_record, Standardizer, TokenLayout, TokenMode};

use crate::config::RunConfig;

/// Worker cap from `WSD_THREADS`, else the machine's parallelism.
pub fn thread_budget() -> usize {
    std::env::var("WSD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub struct GenData {
    pub identities: Option<usize>,
    pub frames: Option<usize>,
    pub cameras: Option<usize>,
    pub resolution: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn gen_data(cfg: &RunConfig, a: &GenData) -> Result<Value> {
    let mut d = cfg.data.clone();
    d.identities = a.identities.unwrap_or(d.identities);
    d.frames = a.frames.unwrap_or(d.frames);
    d.cameras = a.cameras.unwrap_or(d.cameras);
    d.resolution = a.resolution.unwrap_or(d.resolution);
    d.seed = a.seed.unwrap_or(d.seed);
    let m = generate_dataset(&d, &a.out)?;
    let images: usize = m.identities.iter().map(|i| i.frames.iter().map(|f| f.images.len()).sum::<usize>()).sum();
    Ok(json!({ "out": a.out, "identities": m.identities.len(), "images": images, "seed": d.seed }))
}

fn fit_one(cfg: &RunConfig, data_dir: &Path, identity: usize, out: &Path) -> Result<Value> {
    let t = Instant::now();
    let data = FitData::load(data_dir, identity)?;
    let init = unet_init(&cfg.fit.network, cfg.fit.seed)?;
    let every = (cfg.fit.iterations / 10).max(1);
    let (rec, log) = fit_identity_with(&data, &init, &cfg.fit, |it, terms| {
        if it % every == 0 {
            log::info!("identity {identity} iteration {it}: loss {:.5}", terms.total);
        }
    })?;
    create_parent(out)?;
    save_record(&rec, out)?;
    let csv = out.with_extension("csv");
    log.save(&csv)?;
    Ok(json!({
        "identity": identity,
        "out": out,
        "loss_csv": csv,
        "iterations": cfg.fit.iterations,
        "final_loss": log.totals().last().copied(),
        "seconds": t.elapsed().as_secs_f64(),
    }))
}

pub fn fit(cfg: &RunConfig, data: &Path, identity: usize, out: &Path) -> Result<Value> {
    fit_one(cfg, data, identity, out)
}

pub fn fit_all(cfg: &RunConfig, data: &Path, out_dir: &Path) -> Result<Value> {
    let manifest = Manifest::load(data)?;
    create_dir(out_dir)?;
    let ids: Vec<usize> = manifest.identities.iter().map(|e| e.index).collect();
    let workers = thread_budget().min(ids.len()).max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Value>>>> = Mutex::new((0..ids.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= ids.len() {
                    break;
                }
                let path = out_dir.join(format!("identity_{}.wsdw", ids[k]));
                let r = fit_one(cfg, data, ids[k], &path);
                results.lock().expect("no panics while holding the lock")[k] = Some(r);
            });
        }
    });
    let mut fits = Vec::with_capacity(ids.len());
    for r in results.into_inner().expect("workers joined") {
        fits.push(r.expect("every identity visited")?);
    }
    Ok(json!({ "out": out_dir, "workers": workers, "checkpoints": fits.len(), "fits": fits }))
}

/// Expand glob patterns; plain paths pass through. Sorted, deduplicated.
pub fn expand_paths(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        if p.contains(['*', '?', '[']) {
            for e in glob::glob(p).with_context(|| format!("bad pattern {p}"))? {
                out.push(e?);
            }
        } else {
            out.push(PathBuf::from(p));
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn pack(ckpts: &[String], out: &Path) -> Result<Value> {
    let paths = expand_paths(ckpts)?;
    ensure!(!paths.is_empty(), "no checkpoints match {ckpts:?}");
    let records = paths
        .iter()
        .map(|p| load_record(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let st = Standardizer::fit(&records)?;
    create_parent(out)?;
    save_pack(&records, &st, out)?;
    Ok(json!({ "out": out, "records": records.len(), "dim": st.dim(), "inputs": paths }))
}

fn layout_for(mode: TokenMode, shapes: &[wsd_weights::LayerShape]) -> Result<TokenLayout> {
    Ok(match mode {
        TokenMode::Layerwise => TokenLayout::layerwise(shapes),
        TokenMode::Flat { chunk } => TokenLayout::flat(shapes.iter().map(|s| s.len()).sum(), chunk)?,
    })
}

pub fn train_diffusion(cfg: &RunConfig, pack_path: &Path, out: &Path) -> Result<Value> {
    let t = Instant::now();
    let (records, st) = load_pack(pack_path)?;
    ensure!(!records.is_empty(), "{} holds no records", pack_path.display());
    let shapes = records[0].shapes();
    let data = records.iter().map(|r| st.apply(&r.flatten())).collect::<std::result::Result<Vec<_>, _>>()?;
    let dc = &cfg.diffusion;
    let layout = layout_for(dc.tokens, &shapes)?;
    let tokens = layout.len();
    let mut model = Denoiser::new(dc.denoiser.clone(), layout, dc.train.seed)?;
    let schedule = Schedule::new(dc.schedule)?;
    let every = (dc.train.epochs / 20).max(1);
    let log = train(&mut model, &data, &schedule, &dc.train, |e, l| {
        if e % every == 0 {
            log::info!("epoch {e}: loss {l:.5}");
        }
    })?;
    let ckpt = Checkpoint { denoiser: model, schedule: dc.schedule, standardizer: st, shapes, train: Some(dc.train.clone()) };
    create_parent(out)?;
    ckpt.save(out)?;
    let csv = out.with_extension("csv");
    log.save(&csv)?;
    Ok(json!({
        "out": out,
        "loss_csv": csv,
        "records": records.len(),
        "tokens": tokens,
        "parameters": ckpt.denoiser.param_count(),
        "epochs": dc.train.epochs,
        "final_loss": log.losses.last().copied(),
        "seconds": t.elapsed().as_secs_f64(),
    }))
}

pub fn sample(model: &Path, count: usize, config: &SampleConfig, out_dir: &Path) -> Result<Value> {
    let ckpt = Checkpoint::load(model)?;
    let schedule = ckpt.schedule()?;
    create_dir(out_dir)?;
    let mut files = Vec::with_capacity(count);
    for k in 0..count {
        let rec = sample_record(&ckpt.denoiser, &schedule, &ckpt.standardizer, &ckpt.shapes, config, k)?;
        let path = out_dir.join(format!("sample_{k:03}.wsdw"));
        save_record(&rec, &path)?;
        files.push(path);
    }
    Ok(json!({
        "out": out_dir,
        "count": count,
        "ddim_steps": config.steps,
        "eta": config.eta,
        "seed": config.seed,
        "files": files,
    }))
}

/// A single camera object, or an array of cameras with an index.
pub fn load_camera(path: &Path, index: usize) -> Result<Camera> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(c) = serde_json::from_str::<Camera>(&text) {
        return Ok(c);
    }
    let all: Vec<Camera> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    all.into_iter().nth(index).with_context(|| format!("no camera {index} in {}", path.display()))
}

pub fn render(cfg: &RunConfig, weights: &Path, pose: &Path, camera: &Path, camera_index: usize, out: &Path) -> Result<Value> {
    let rec = load_record(weights)?;
    let pose = load_pose(pose)?;
    let cam = load_camera(camera, camera_index)?;
    let template = Template::build(&cfg.data.template)?;
    let anchors = AnchorMap::build(&template, cfg.fit.network.resolution)?;
    let frame = Frame::new(&template, &anchors, pose, Vec::new())?;
    let img = wsd_avatar::render(&cfg.fit.network, &rec, &frame, &cam)?;
    if img.rgb.iter().chain(&img.opacity).any(|v| !v.is_finite()) {
        bail!("render produced non-finite pixels");
    }
    create_parent(out)?;
    img.save_png(out)?;
    let coverage = img.opacity.iter().filter(|&&o| o > 0.5).count() as f64 / img.opacity.len() as f64;
    Ok(json!({ "out": out, "width": img.width, "height": img.height, "coverage": coverage }))
}

pub fn eval(cfg: &RunConfig, generated: &Path, reference: &Path, seed: Option<u64>, out: &Path) -> Result<Value> {
    let e = &cfg.eval;
    let probes = ProbeSet::new(ProbeConfig {
        poses: e.poses,
        cameras: e.cameras,
        resolution: e.resolution,
        seed: seed.unwrap_or(e.seed),
        network: cfg.fit.network.clone(),
        template: cfg.data.template.clone(),
    })?;
    let report = evaluate(generated, reference, &probes)?;
    create_parent(out)?;
    report.save(out)?;
    Ok(json!({ "out": out, "report": report }))
}
