use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cgboost::config::RunConfig;
use cgboost::data::{generate_synthetic, ingest, write_frame, Regime, SyntheticSpec};
use cgboost::eval::{run_backtest, to_canonical_json};
use cgboost::features::SeriesFrame;
use cgboost::gradcheck::run_gradcheck;
use cgboost::model::{train_model, PipelineModel};
use cgboost::{Error, Result};

use crate::Common;

pub enum Outcome {
    Done,
    GradientMismatch,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_frames(paths: &[PathBuf]) -> Result<Vec<SeriesFrame>> {
    paths
        .iter()
        .map(|p| {
            let ing = ingest(p)?;
            for w in &ing.warnings {
                log::warn!("{}: {w}", p.display());
            }
            Ok(ing.frame)
        })
        .collect()
}

/// Writes via a sibling temp file so a failed run never leaves a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            Error::from(e).context(path.display())
        })
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(common: &Common, data: &[PathBuf]) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let frames = load_frames(data)?;
    let trained = train_model(&frames, &cfg)?;
    for w in &trained.log.normalizer_warnings {
        log::warn!("{w}");
    }
    for (index, n) in &trained.log.sample_counts {
        log::info!("{index}: {n} training samples");
    }
    write_atomic(&common.out, &trained.model.to_bytes())?;
    write_atomic(
        &sidecar(&common.out, ".log.json"),
        &to_canonical_json(&trained.log),
    )?;
    println!(
        "trained on {} series; final stage MSE {:.6e}; model written to {}",
        frames.len(),
        trained
            .log
            .boost_stage_mse
            .last()
            .copied()
            .unwrap_or(f64::NAN),
        common.out.display()
    );
    Ok(Outcome::Done)
}

pub fn predict(common: &Common, model_path: &Path, data: &Path) -> Result<Outcome> {
    if common.config.is_some() {
        let cfg = load_config(common)?;
        log::info!(
            "config {} supplied; prediction uses the configuration stored in the model",
            cfg.hash()
        );
    }
    let model = PipelineModel::load(model_path)?;
    let frame = load_frames(&[data.to_path_buf()])?.remove(0);
    let preds = model.predict_frame(&frame)?;
    let mut out = String::from("date,close_today,predicted_rate,predicted_next_close\n");
    for p in &preds {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e}",
            p.date, p.close_today, p.predicted_rate, p.predicted_next_close
        )
        .unwrap();
    }
    write_atomic(&common.out, out.as_bytes())?;
    println!(
        "{} predictions written to {}",
        preds.len(),
        common.out.display()
    );
    Ok(Outcome::Done)
}

pub fn evaluate(common: &Common, data: &[PathBuf]) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let frames = load_frames(data)?;
    let report = run_backtest(&frames, &cfg)?;
    if !report.audit.violations.is_empty() {
        for v in &report.audit.violations {
            log::error!("leakage: {v}");
        }
    }
    let mut metrics = Vec::new();
    report.write_metrics_csv(&mut metrics)?;
    let mut curves = Vec::new();
    report.write_curves_csv(&mut curves)?;
    std::fs::create_dir_all(&common.out)
        .map_err(|e| Error::from(e).context(common.out.display()))?;
    write_atomic(&common.out.join("report.json"), &report.to_json())?;
    write_atomic(&common.out.join("metrics.csv"), &metrics)?;
    write_atomic(&common.out.join("curves.csv"), &curves)?;

    println!(
        "{:<12} {:>4} {:>10} {:>10} {:>8} {:>8}",
        "index", "year", "mape", "naive", "r", "theil_u"
    );
    for idx in &report.indexes {
        for y in &idx.years {
            println!(
                "{:<12} {:>4} {:>10.6} {:>10.6} {:>8.4} {:>8.5}",
                idx.index,
                y.year,
                y.model.mape,
                y.naive.mape,
                y.model.r.unwrap_or(f64::NAN),
                y.model.theil_u
            );
        }
        let a = &idx.average;
        println!(
            "{:<12} {:>4} {:>10.6} {:>10.6} {:>8.4} {:>8.5}",
            idx.index,
            "avg",
            a.model.mape,
            a.naive.mape,
            a.model.r.unwrap_or(f64::NAN),
            a.model.theil_u
        );
    }
    println!(
        "leakage audit: {} stamps checked, {} violations",
        report.audit.checked,
        report.audit.violations.len()
    );
    Ok(Outcome::Done)
}

pub fn gen_data(common: &Common, days: usize, regime: &str) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let regime: Regime = regime.parse()?;
    let name = common
        .out
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| {
            Error::Config(format!(
                "cannot derive an index name from {}",
                common.out.display()
            ))
        })?;
    let frame = generate_synthetic(&SyntheticSpec::new(name, days, regime, cfg.seed))?;
    let mut buf = Vec::new();
    write_frame(&frame, &mut buf)?;
    write_atomic(&common.out, &buf)?;
    println!("{days} days of {name} written to {}", common.out.display());
    Ok(Outcome::Done)
}

pub fn gradcheck(common: &Common, cases: usize) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let report = run_gradcheck(cfg.seed, cases)?;
    for s in &report.suites {
        println!(
            "{:<9} cases {:>4} coords {:>7} kinks {:>3} failures {:>3} max_abs {:.2e} max_rel {:.2e}",
            s.suite, s.cases, s.coordinates, s.kinks, s.failures, s.max_abs_error, s.max_rel_error
        );
        if let Some(f) = &s.first_failure {
            println!("          first failure: {f}");
        }
    }
    write_atomic(&common.out, &to_canonical_json(&report))?;
    Ok(if report.passed() {
        Outcome::Done
    } else {
        Outcome::GradientMismatch
    })
}
