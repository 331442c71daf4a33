//! The six subcommands. Each one is a plain function so the determinism
//! tests can drive them without spawning processes.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::Path;

use afgeo_core::data::{generate, generate_batch, write_dataset};
use afgeo_core::head::decode;
use afgeo_core::loss::LossWeights;
use afgeo_core::pixmap::write_pgm;
use afgeo_core::train::{evaluate, train, EvalReport, LOG_HEADER};
use afgeo_core::verify::selftest;
use afgeo_core::{GtBox, Model};
use anyhow::{bail, Context};

use crate::config::CliConfig;

/// Worker count for data generation, capped by AFGEO_THREADS (default 1).
pub fn worker_threads() -> anyhow::Result<usize> {
    parse_threads(std::env::var("AFGEO_THREADS").ok())
}

fn parse_threads(raw: Option<String>) -> anyhow::Result<usize> {
    match raw {
        None => Ok(1),
        Some(s) => match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => bail!("AFGEO_THREADS must be a positive integer, got {s:?}"),
        },
    }
}

/// config.json plus the checkpoints/logs/reports skeleton.
fn prepare_run_dir(out: &Path, cfg: &CliConfig) -> anyhow::Result<()> {
    for sub in ["checkpoints", "logs", "reports"] {
        fs::create_dir_all(out.join(sub))
            .with_context(|| format!("creating {}", out.join(sub).display()))?;
    }
    cfg.save(&out.join("config.json"))
}

pub fn gen_data(cfg: &CliConfig, out: &Path) -> anyhow::Result<()> {
    let samples = generate_batch(&cfg.synth(), 0, cfg.train_samples, worker_threads()?)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    cfg.save(&out.join("config.json"))?;
    write_dataset(&samples, out)?;
    println!(
        "wrote {} samples to {}",
        samples.len(),
        out.join("annotations.jsonl").display()
    );
    Ok(())
}

pub fn train_cmd(cfg: &CliConfig, out: &Path, init: Option<&Path>) -> anyhow::Result<()> {
    prepare_run_dir(out, cfg)?;
    let dataset = generate_batch(&cfg.synth(), 0, cfg.train_samples, worker_threads()?)?;
    let model: Model<f32> = Model::new(cfg.model())?;
    if let Some(path) = init {
        model
            .load(path)
            .with_context(|| format!("loading initial checkpoint {}", path.display()))?;
    }
    let log_path = out.join("logs").join("train.tsv");
    let mut log_file = File::create(&log_path)?;
    writeln!(log_file, "{LOG_HEADER}")?;
    println!("{LOG_HEADER}");
    let ckpt_dir = out.join("checkpoints");
    train(
        &model,
        &dataset,
        &cfg.train(),
        &LossWeights::default(),
        |log| {
            let line = log.tsv_line();
            writeln!(log_file, "{line}").map_err(|e| afgeo_core::Error::io(&log_path, e))?;
            println!("{line}");
            Ok(())
        },
        |epoch, m| m.save(&ckpt_dir.join(format!("epoch_{epoch:04}.ckpt"))),
    )?;
    let final_path = ckpt_dir.join("final.ckpt");
    model.save(&final_path)?;
    println!("saved {}", final_path.display());
    Ok(())
}

fn load_model(cfg: &CliConfig, checkpoint: Option<&Path>) -> anyhow::Result<Model<f32>> {
    let model = Model::new(cfg.model())?;
    if let Some(path) = checkpoint {
        model
            .load(path)
            .with_context(|| format!("loading checkpoint {}", path.display()))?;
    }
    Ok(model)
}

pub fn eval_table(report: &EvalReport) -> String {
    format!(
        "Method          acc@0.25(%)  acc@0.5(%)  mean IoU\n\
         AFGeo           {:>11.2}  {:>10.2}  {:>8.3}\n",
        report.acc_at_25, report.acc_at_50, report.mean_iou
    )
}

pub fn eval_cmd(cfg: &CliConfig, out: &Path, checkpoint: Option<&Path>) -> anyhow::Result<()> {
    prepare_run_dir(out, cfg)?;
    let dataset = generate_batch(
        &cfg.synth(),
        cfg.eval_offset,
        cfg.eval_samples,
        worker_threads()?,
    )?;
    let model = load_model(cfg, checkpoint)?;
    let report = evaluate(&model, &dataset)?;
    print!("{}", eval_table(&report));
    let report_path = out.join("reports").join("eval.json");
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&report_path, text)?;
    println!("report: {}", report_path.display());
    Ok(())
}

pub fn infer_line(sample_id: &str, bbox: &GtBox, confidence: f64) -> String {
    format!(
        "{},{:.2},{:.2},{:.2},{:.2},{:.2}",
        sample_id, bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max, confidence
    )
}

pub fn infer_cmd(cfg: &CliConfig, out: &Path, checkpoint: Option<&Path>) -> anyhow::Result<()> {
    prepare_run_dir(out, cfg)?;
    let dataset = generate_batch(
        &cfg.synth(),
        cfg.eval_offset,
        cfg.eval_samples,
        worker_threads()?,
    )?;
    let model = load_model(cfg, checkpoint)?;
    let csv_path = out.join("reports").join("infer.csv");
    let mut csv = File::create(&csv_path)?;
    for sample in &dataset {
        let outputs = model.forward(
            &sample.query.to_tensor(),
            sample.click,
            &sample.reference.to_tensor(),
        )?;
        let decoded = decode(&outputs)?;
        let line = infer_line(&sample.sample_id, &decoded.bbox, decoded.confidence);
        writeln!(csv, "{line}")?;
        println!("{line}");
    }
    Ok(())
}

/// Linear 8-bit mapping with 1.0 pinned to 255.
pub fn linear_bytes(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Min-max 8-bit mapping; a constant map renders black.
pub fn minmax_bytes(values: &[f32]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = f64::from(hi - lo);
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (f64::from(v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Sample ids look like "{seed:08x}-{index:06}"; recover both parts.
pub fn parse_sample_id(id: &str) -> anyhow::Result<(u64, u64)> {
    let (seed_hex, index_dec) = id
        .split_once('-')
        .with_context(|| format!("sample id {id:?} is not of the form SEEDHEX-INDEX"))?;
    let seed = u64::from_str_radix(seed_hex, 16)
        .with_context(|| format!("sample id {id:?}: bad seed part {seed_hex:?}"))?;
    let index = index_dec
        .parse::<u64>()
        .with_context(|| format!("sample id {id:?}: bad index part {index_dec:?}"))?;
    Ok((seed, index))
}

pub fn export_heatmap(
    cfg: &CliConfig,
    out: &Path,
    checkpoint: Option<&Path>,
    sample_id: &str,
) -> anyhow::Result<()> {
    prepare_run_dir(out, cfg)?;
    let (seed, index) = parse_sample_id(sample_id)?;
    let mut synth = cfg.synth();
    synth.seed = seed;
    let sample = generate(&synth, index)?;
    let model = load_model(cfg, checkpoint)?;
    let (_, trace) = model.forward_with_trace(
        &sample.query.to_tensor(),
        sample.click,
        &sample.reference.to_tensor(),
    )?;

    let reports = out.join("reports");
    let gpe = trace.gpe;
    let (h, w) = (gpe.shape()[0], gpe.shape()[1]);
    let gpe_path = reports.join(format!("{sample_id}_gpe.pgm"));
    write_pgm(&linear_bytes(&gpe.to_vec()), h, w, &gpe_path)?;
    println!("wrote {}", gpe_path.display());

    match trace.a1 {
        Some(a1) => {
            let (h, w) = (a1.shape()[0], a1.shape()[1]);
            let a1_path = reports.join(format!("{sample_id}_a1.pgm"));
            write_pgm(&minmax_bytes(&a1.to_vec()), h, w, &a1_path)?;
            println!("wrote {}", a1_path.display());
        }
        None => println!("fusion disabled (use_cvoam=false); no spatial gate to render"),
    }
    Ok(())
}

pub fn selftest_cmd() -> anyhow::Result<i32> {
    let results = selftest()?;
    for r in &results {
        println!("{}", r.line());
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name)
        .collect();
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(0)
    } else {
        println!("FAILED: {}", failed.join(", "));
        Ok(1)
    }
}
