use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use amodal_ls::dataset::{generate_many, load_dataset, save_dataset};
use amodal_ls::metrics::EvalReport;
use amodal_ls::nn::checkpoint::Checkpoint;
use amodal_ls::nn::train::{train as run_training, TrainConfig};
use amodal_ls::pipeline::{Method, Pipeline};
use amodal_ls::render;
use amodal_ls::{EvolutionConfig, Exec};
use amodal_ls_service::{AppState, ServiceConfig};
use anyhow::Context;
use serde::Serialize;
use serde_json::json;
use tracing::info;

use crate::config::{echo, FileConfig};
use crate::{EvalArgs, EvolveArgs, GenerateArgs, ServeArgs, TrainArgs, UserError};

pub const FAILED_MARKER: &str = "FAILED";
pub const CHECKPOINT_FILE: &str = "checkpoint.amls";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

/// Runs `f` with `dir` as its output directory. A stale failure marker is
/// removed first; on error a new one is written with the diagnostic.
fn in_output_dir(dir: &Path, f: impl FnOnce() -> anyhow::Result<()>) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).with_context(|| format!("removing {}", marker.display()))?;
    }
    let result = f();
    if let Err(e) = &result {
        let _ = fs::write(&marker, format!("{e:#}\n"));
    }
    result
}

pub fn generate(a: &GenerateArgs) -> anyhow::Result<()> {
    if a.count == 0 {
        return Err(UserError("count must be positive".into()).into());
    }
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    if let Some(n) = a.size {
        cfg.scene = cfg.scene.with_size(n, n);
    }
    cfg.scene.validate()?;
    in_output_dir(&a.out, || {
        let t = Instant::now();
        let samples = generate_many(a.seed, a.count, &cfg.scene, Exec::default())?;
        echo(&a.out, CONFIG_ECHO_FILE, &cfg.to_toml())?;
        save_dataset(&a.out, &cfg.scene, &samples)?;
        let mean_occ = samples.iter().map(|s| s.occlusion_rate).sum::<f64>() / samples.len() as f64;
        info!(
            event = "generated",
            count = a.count,
            base_seed = a.seed,
            mean_occlusion = mean_occ,
            elapsed_ms = t.elapsed().as_millis() as u64,
            out = %a.out.display()
        );
        Ok(())
    })
}

fn resolve_train_config(a: &TrainArgs) -> anyhow::Result<FileConfig> {
    let mut cfg = FileConfig::load(a.config.as_deref())?;
    let t = &mut cfg.train;
    if let Some(steps) = a.steps {
        t.evolution = t.evolution.with_steps(steps as usize)?;
    }
    if let Some(s) = a.supervision {
        t.supervision = s;
    }
    if let Some(p) = a.prompts {
        t.prompts = p as usize;
    }
    if let Some(e) = a.epochs {
        t.epochs = e as usize;
    }
    if let Some(lr) = a.lr {
        t.optimizer.lr = lr;
    }
    if let Some(seed) = a.seed {
        t.seed = seed;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b as usize;
    }
    if let Some(w) = a.velocity_warmup_epochs {
        t.velocity_warmup_epochs = w;
    }
    t.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> anyhow::Result<()> {
    let mut cfg = resolve_train_config(a)?;
    let dataset = load_dataset(&a.data)?;
    // the echoed scene is the one the data was generated with
    cfg.scene = dataset.config.clone();
    in_output_dir(&a.out, || {
        echo(&a.out, CONFIG_ECHO_FILE, &cfg.to_toml())?;
        let log_path = a.out.join(TRAIN_LOG_FILE);
        let mut log = fs::File::create(&log_path)
            .with_context(|| format!("creating {}", log_path.display()))?;
        let t = Instant::now();
        let mut log_err = None;
        let outcome = run_training(&dataset.samples, &cfg.train, Exec::default(), |e| {
            info!(
                event = "epoch",
                epoch = e.epoch,
                loss = e.loss,
                loss_init = e.loss_init,
                loss_evo = e.loss_evo,
                elapsed_ms = t.elapsed().as_millis() as u64
            );
            let line = serde_json::to_string(e).expect("epoch log serializes");
            if let Err(err) = writeln!(log, "{line}") {
                log_err.get_or_insert(err);
            }
        })?;
        if let Some(err) = log_err {
            return Err(err).with_context(|| format!("writing {}", log_path.display()));
        }
        let ckpt = outcome.checkpoint(&cfg.train);
        let path = a.out.join(CHECKPOINT_FILE);
        ckpt.save(&path)?;
        info!(event = "checkpoint", path = %path.display(), hash = %ckpt.content_hash());
        Ok(())
    })
}

fn load_checkpoint(path: &Path) -> anyhow::Result<(Checkpoint, String)> {
    let ckpt = Checkpoint::load(path)?;
    let hash = ckpt.content_hash();
    Ok((ckpt, hash))
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Learned => "learned",
        Method::Phi0Only => "phi0",
        Method::Geometric => "geometric",
    }
}

/// Evaluation report written by `eval`.
#[derive(Serialize)]
struct EvalOutput<'a> {
    version: u32,
    method: &'static str,
    checkpoint: Option<&'a str>,
    max_prompts: Option<u64>,
    evolution: EvolutionConfig,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let method = a.baseline.unwrap_or(Method::Learned);
    let (pipeline, hash) = match (&a.checkpoint, method) {
        (Some(path), _) => {
            let (ckpt, hash) = load_checkpoint(path)?;
            (Pipeline::from(ckpt), Some(hash))
        }
        (None, Method::Geometric) => {
            let cfg = TrainConfig::default();
            let (initializer, velocity) = cfg.init_models();
            let p = Pipeline {
                initializer,
                velocity,
                init: cfg.init,
                evolution: cfg.evolution,
            };
            (p, None)
        }
        (None, _) => {
            return Err(
                UserError("--checkpoint is required unless --baseline geometric".into()).into(),
            )
        }
    };
    let pipeline = match a.steps {
        Some(t) => {
            let evo = pipeline.evolution.with_steps(t as usize)?;
            pipeline.with_evolution(evo)
        }
        None => pipeline,
    };
    let dataset = load_dataset(&a.data)?;
    let dir = a
        .report
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    in_output_dir(dir, || {
        let t = Instant::now();
        let label = method_name(method);
        let report = pipeline.evaluate(
            label,
            &dataset.samples,
            method,
            a.prompts.map(|p| p as usize),
            Exec::default(),
        )?;
        let out = EvalOutput {
            version: 1,
            method: label,
            checkpoint: hash.as_deref(),
            max_prompts: a.prompts,
            evolution: pipeline.evolution,
            report: &report,
        };
        let text = serde_json::to_string_pretty(&out).expect("report serializes");
        fs::write(&a.report, text + "\n")
            .with_context(|| format!("writing {}", a.report.display()))?;
        let stem = a
            .report
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("report");
        let resolved = toml::to_string(&json!({
            "method": label,
            "checkpoint": hash.as_deref().unwrap_or(""),
            "max_prompts": a.prompts.unwrap_or(0),
            "evolution": pipeline.evolution,
        }))
        .expect("eval config serializes");
        echo(dir, &format!("{stem}.config.toml"), &resolved)?;
        println!("{}", EvalReport::table(&[&report]));
        info!(
            event = "evaluated",
            method = label,
            samples = report.instances.len(),
            miou_full = report.miou_full,
            miou_occ = report.miou_occ,
            elapsed_ms = t.elapsed().as_millis() as u64
        );
        Ok(())
    })
}

pub fn evolve(a: &EvolveArgs) -> anyhow::Result<()> {
    let (ckpt, hash) = load_checkpoint(&a.checkpoint)?;
    let base = ckpt.evolution;
    let evolution = EvolutionConfig::new(
        a.steps.map(|s| s as usize).unwrap_or(base.steps()),
        a.dt.unwrap_or(base.dt()),
        a.mu.unwrap_or(base.mu()),
        a.eps.unwrap_or(base.heaviside_eps()),
    )?;
    let bytes = fs::read(&a.image)
        .map_err(|e| UserError(format!("cannot read image {}: {e}", a.image.display())))?;
    let image = render::decode_gray_png(&bytes)
        .with_context(|| format!("loading {}", a.image.display()))?;
    let (w, h) = image.dims();
    for p in &a.prompts {
        if !p.in_bounds(w, h) {
            return Err(amodal_ls::Error::Prompt(format!(
                "prompt ({}, {}) outside {w}x{h} image",
                p.x, p.y
            ))
            .into());
        }
    }
    let pipeline = Pipeline::from(ckpt).with_evolution(evolution);
    in_output_dir(&a.out, || {
        let run = pipeline.run(&image, &a.prompts)?;
        let write = |name: String, bytes: Vec<u8>| {
            let path = a.out.join(&name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
        };
        for (i, phi) in run.phis.iter().enumerate() {
            write(
                format!("contour_{i:03}.png"),
                render::contour_overlay_png(&image, phi, &a.prompts),
            )?;
            if i > 0 {
                write(format!("phi_{i:03}.png"), render::signed_field_png(phi))?;
            }
        }
        for (i, v) in run.velocities.iter().enumerate() {
            write(
                format!("velocity_{:03}.png", i + 1),
                render::signed_field_png(v),
            )?;
        }
        write("mask.png".into(), render::mask_png(&run.mask))?;
        let prompts: Vec<[f64; 2]> = a.prompts.iter().map(|p| [p.x, p.y]).collect();
        let summary = json!({
            "checkpoint": hash,
            "width": w,
            "height": h,
            "prompts": prompts,
            "evolution": evolution,
            "areas": run.areas(),
            "used_fallback": run.init.used_fallback,
        });
        write(
            "summary.json".into(),
            (serde_json::to_string_pretty(&summary).expect("summary") + "\n").into_bytes(),
        )?;
        let resolved = toml::to_string(
            &json!({ "checkpoint": hash, "prompts": prompts, "evolution": evolution }),
        )
        .expect("evolve config serializes");
        echo(&a.out, CONFIG_ECHO_FILE, &resolved)?;
        info!(event = "evolved", steps = evolution.steps(), final_area = run.mask.count(), out = %a.out.display());
        Ok(())
    })
}

pub fn serve(a: &ServeArgs) -> anyhow::Result<()> {
    let (ckpt, hash) = load_checkpoint(&a.checkpoint)?;
    let mut config = ServiceConfig {
        session_ttl: Duration::from_secs(a.ttl),
        frame_cap: a.frame_cap,
        cors_origin: a.cors_origin.clone(),
        ..ServiceConfig::default()
    };
    if let Some(n) = a.size {
        config.scene = config.scene.with_size(n, n);
        config.scene.validate()?;
    }
    let state = AppState::new(Pipeline::from(ckpt), hash.clone(), config);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.bind)
            .await
            .map_err(|e| UserError(format!("cannot bind {}: {e}", a.bind)))?;
        let addr = listener.local_addr()?;
        println!("amodal-ls serving on http://{addr} (checkpoint {hash})");
        info!(event = "serving", addr = %addr, checkpoint = %hash);
        amodal_ls_service::serve_on(listener, state).await?;
        Ok(())
    })
}
