use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use mono3d_core::detector::{read_checkpoint, train, write_checkpoint, Ablation, FocalSample, IntrinsicSource, TrainConfig};
use mono3d_core::encoder::{
    build_bank, description_file_name, load_descriptions, pca_projection, similarity_matrix, ExternalEncoder,
    PcaOptions, ReferenceEncoder, TextEncoder,
};
use mono3d_core::inference::{evaluate_over_focals, focal_rows_csv, mismatch_rows_csv, mismatch_sweep};
use mono3d_core::scenegen::{build_dataset, load_sample, read_geometry, read_manifest, write_dataset, Sample, Split};
use mono3d_core::{Bank, Detector, Error, Result};

use crate::registry::{Cmd, RunConfig};

/// Focals seen in training; the default for synth and bank.
pub const SEEN_FOCALS: [f64; 4] = [700.0, 900.0, 1100.0, 1300.0];

pub const BANK_FILE: &str = "bank.txt";
pub const SIMILARITY_FILE: &str = "similarity.csv";
pub const PCA_FILE: &str = "pca.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.log";
pub const FOCALS_CSV: &str = "focals.csv";
pub const MISMATCH_CSV: &str = "mismatch.csv";

pub fn execute(cmd: Cmd, c: &RunConfig) -> Result<()> {
    match cmd {
        Cmd::Synth => synth(c),
        Cmd::Bank => bank(c),
        Cmd::Train => train_cmd(c),
        Cmd::Eval => eval(c),
    }
}

fn out_dir(c: &RunConfig, fallback: &str) -> Result<PathBuf> {
    let dir = c.optional_path("out").unwrap_or_else(|| PathBuf::from(fallback));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn synth(c: &RunConfig) -> Result<()> {
    let cfg = c.dataset_config()?;
    let focals = c.focals_or(&SEEN_FOCALS)?;
    let r = c.list("ratios")?;
    let [a, b, t] = r[..] else {
        return Err(Error::Config(format!("--ratios needs three values, got {}", r.len())));
    };
    let ds = build_dataset(c.seed()?, c.parse("scenes")?, &focals, (a, b, t), &cfg, c.workers()?)?;
    let manifest = write_dataset(&ds, &out_dir(c, "data/synth")?)?;
    println!("{}\t{}", manifest.display(), ds.records.len());
    Ok(())
}

fn bank(c: &RunConfig) -> Result<()> {
    let dir = c.path("desc_dir")?;
    let focals = c.focals_or(&SEEN_FOCALS)?;
    let missing: Vec<String> = focals
        .iter()
        .map(|&f| description_file_name(f))
        .filter(|n| !dir.join(n).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "missing description files in {}: {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    let sets: Vec<_> = load_descriptions(&dir)?
        .into_iter()
        .filter(|s| focals.contains(&s.focal))
        .collect();
    let dim: usize = c.parse("dim")?;
    let name = c.raw("encoder");
    let encoder: Box<dyn TextEncoder> = match name {
        "reference" => Box::new(ReferenceEncoder::new(dim)?),
        _ => match name.strip_prefix("external:") {
            Some(cmd) if !cmd.trim().is_empty() => Box::new(ExternalEncoder::new(cmd, dim)),
            _ => return Err(Error::Config(format!("unknown encoder '{name}' (reference|external:<command>)"))),
        },
    };
    let mut bank = build_bank(&sets, encoder.as_ref())?;
    bank.freeze();
    let out = out_dir(c, "data/bank")?;
    let path = out.join(BANK_FILE);
    bank.write(&path)?;
    similarity_matrix(&bank)?.write_csv(&out.join(SIMILARITY_FILE))?;
    if bank.len() >= 2 {
        pca_projection(&bank, 2.min(dim), PcaOptions::default())?.write_csv(&out.join(PCA_FILE))?;
    } else {
        warn!("a single bank entry has no principal components; {PCA_FILE} not written");
    }
    println!("{}\t{}\t{}", path.display(), bank.len(), bank.content_hash());
    Ok(())
}

fn load_split(manifest: &Path, split: Option<Split>) -> Result<(Vec<(f64, Sample)>, mono3d_core::scenegen::DatasetGeometry)> {
    let geometry = read_geometry(manifest)?;
    let samples = read_manifest(manifest)?
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
        .map(|e| Ok((e.focal, load_sample(manifest, &geometry, e)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, geometry))
}

fn focal_samples(samples: &[(f64, Sample)]) -> Vec<FocalSample<'_>> {
    samples.iter().map(|(f, s)| FocalSample { focal: *f, sample: s }).collect()
}

fn train_cmd(c: &RunConfig) -> Result<()> {
    let manifest = c.path("manifest")?;
    let (samples, geometry) = load_split(&manifest, Some(Split::Train))?;
    if samples.is_empty() {
        return Err(Error::Config(format!("{} has no training records", manifest.display())));
    }
    let ablation: Ablation = c.parse("ablation")?;
    let mut cfg = c.detector_config()?;
    for (key, given, actual) in [
        ("detector.width", &mut cfg.width, geometry.width),
        ("detector.height", &mut cfg.height, geometry.height),
    ] {
        if c.is_set(key) && *given != actual {
            return Err(Error::Config(format!("{key} = {given} but the dataset images are {actual}")));
        }
        *given = actual;
    }
    if c.is_set("detector.fusion") || c.is_set("detector.source") {
        warn!("--ablation {ablation} overrides detector.fusion and detector.source");
    }
    ablation.apply(&mut cfg);
    let bank = if cfg.intrinsic_aware && cfg.source == IntrinsicSource::Bank {
        let bank = Bank::read(&c.path("bank")?)?;
        if c.is_set("detector.bank_dim") && cfg.bank_dim != bank.dim() {
            return Err(Error::Config(format!(
                "detector.bank_dim = {} but the bank is {} wide",
                cfg.bank_dim,
                bank.dim()
            )));
        }
        cfg.bank_dim = bank.dim();
        Some(bank)
    } else {
        None
    };
    cfg.validate()?;
    let seed = c.seed()?;
    let mut state = Detector::new(cfg, seed)?;
    let tc = TrainConfig {
        epochs: c.parse("epochs")?,
        seed,
        max_steps: c.parse("max_steps")?,
    };
    info!("training {ablation} on {} images for {} epochs", samples.len(), tc.epochs);
    let report = train(&mut state, &focal_samples(&samples), bank.as_ref(), &tc)?;
    info!("bank lookups: {}", report.bank_lookups);
    let out = out_dir(c, "runs/train")?;
    let ckpt = out.join(CHECKPOINT_FILE);
    write_checkpoint(&state, &ckpt)?;
    write(&out.join(METRICS_FILE), &report.log_text())?;
    let last = report.metrics.last().map_or(f64::NAN, |m| m.loss);
    println!("{}\t{}\t{last:.6}", ckpt.display(), report.metrics.len());
    Ok(())
}

fn eval(c: &RunConfig) -> Result<()> {
    let state: Detector = read_checkpoint(&c.path("ckpt")?, None)?;
    let cfg = &state.config;
    let bank = if cfg.intrinsic_aware && cfg.source == IntrinsicSource::Bank {
        let bank = Bank::read(&c.path("bank")?)?;
        if bank.dim() != cfg.bank_dim {
            return Err(Error::Config(format!(
                "bank is {} wide but the checkpoint expects {}",
                bank.dim(),
                cfg.bank_dim
            )));
        }
        Some(bank)
    } else {
        None
    };
    let manifest = c.path("manifest")?;
    let split = match c.raw("eval.split") {
        "all" => None,
        s => Some(s.parse::<Split>().map_err(|e| Error::Config(e.to_string()))?),
    };
    let (samples, geometry) = load_split(&manifest, split)?;
    if (geometry.width, geometry.height) != (cfg.width, cfg.height) {
        return Err(Error::Config(format!(
            "dataset images are {}x{} but the checkpoint expects {}x{}",
            geometry.width, geometry.height, cfg.width, cfg.height
        )));
    }
    let mut focals = c.list("focals")?;
    if focals.is_empty() {
        focals = samples.iter().map(|(f, _)| *f).collect();
        focals.sort_by(f64::total_cmp);
        focals.dedup();
    }
    let mut opts = c.eval_options()?;
    opts.reference_width = geometry.reference_width;
    let policy = c.policy()?;
    let all = focal_samples(&samples);
    let rows = evaluate_over_focals(&state, bank.as_ref(), &policy, &focals, &all, &opts)?;
    let out = out_dir(c, "runs/eval")?;
    let table = out.join(FOCALS_CSV);
    write(&table, &focal_rows_csv(&rows))?;
    println!("{}\t{}", table.display(), rows.len());
    let extra = c.list("mismatch")?;
    if !extra.is_empty() {
        let mut deltas = vec![0.0];
        deltas.extend(extra.into_iter().filter(|d| *d != 0.0));
        let on_grid: Vec<_> = all.into_iter().filter(|s| focals.contains(&s.focal)).collect();
        let rows = mismatch_sweep(&state, bank.as_ref(), &policy, &on_grid, &deltas, &opts)?;
        let path = out.join(MISMATCH_CSV);
        write(&path, &mismatch_rows_csv(&rows))?;
        println!("{}\t{}", path.display(), rows.len());
    }
    Ok(())
}
