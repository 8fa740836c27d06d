use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ipsk_core::config::{ExperimentConfig, Scale, Target};
use ipsk_core::estimator::{estimate as learn, Diagnostics};
use ipsk_core::eval::{
    convergence_study, gap_study as run_gap_study, kernel_error, long_t_study, prediction_study, GapFit, PredictionReport, RateFit,
};
use ipsk_core::io::{read_trajectory, write_trajectory, write_trajectory_csv};
use ipsk_core::measure::empirical_rho;
use ipsk_core::sim::{simulate as simulate_one, NoiseStream};
use ipsk_core::{par, Error, Result};
use serde::Serialize;

pub fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    finish(ExperimentConfig::from_json(&text)?, seed, out)
}

pub fn preset(target: Target, scale: Scale, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    finish(ExperimentConfig::preset(target, scale), seed, out)
}

fn finish(mut cfg: ExperimentConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    cfg.apply_env()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = Some(o);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Configuration as recorded next to outputs, without the output location.
fn portable(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig { out: None, ..cfg.clone() }
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn report_time(dir: &Path, what: &str, start: Instant) -> Result<()> {
    let secs = start.elapsed().as_secs_f64();
    eprintln!("{what}: {secs:.2} s");
    write_json(&dir.join("timing.json"), &serde_json::json!({ "command": what, "wall_seconds": secs }))
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    seed: u64,
    stream: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    m: usize,
    kernel: &'a str,
    config: &'a ExperimentConfig,
    trajectories: Vec<ManifestEntry>,
}

pub fn simulate(cfg: &ExperimentConfig, count: Option<usize>, csv: bool) -> Result<()> {
    let start = Instant::now();
    let dir = out_dir(cfg)?;
    let params = cfg.params()?;
    let count = count.unwrap_or(cfg.m);
    let entries = par::map_indexed(count, |k| -> Result<ManifestEntry> {
        let noise = NoiseStream::new(cfg.seed, k as u64);
        let traj = simulate_one(&params, &cfg.init, cfg.t, cfg.dt, noise)?;
        let file = format!("traj_{k:05}.bin");
        write_with(&dir.join(&file), |w| write_trajectory(w, &traj))?;
        if csv {
            write_with(&dir.join(format!("traj_{k:05}.csv")), |w| write_trajectory_csv(w, &traj))?;
        }
        Ok(ManifestEntry { file, seed: noise.seed, stream: noise.stream })
    });
    let trajectories = entries.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { m: count, kernel: params.kernel.id(), config: &portable(cfg), trajectories };
    write_json(&dir.join("manifest.json"), &manifest)?;
    report_time(&dir, "simulate", start)
}

#[derive(Serialize)]
struct EstimateDiagnostics<'a> {
    #[serde(flatten)]
    core: &'a Diagnostics,
    /// Error against the configured kernel under the data's own distance measure.
    kernel_error_empirical: f64,
}

pub fn estimate(cfg: &ExperimentConfig, files: &[PathBuf]) -> Result<()> {
    let start = Instant::now();
    let trajs = files.iter().map(|f| read_trajectory(BufReader::new(File::open(f)?))).collect::<Result<Vec<_>>>()?;
    let dir = out_dir(cfg)?;
    let params = cfg.params()?;
    let est = learn(&trajs, &cfg.basis)?;
    let rho = empirical_rho(&trajs, cfg.rho_bins)?;
    let diag = EstimateDiagnostics { core: &est.diagnostics, kernel_error_empirical: kernel_error(&est.kernel, &params.kernel, &rho) };
    write_json(&dir.join("kernel.json"), &est.kernel.to_json())?;
    write_json(&dir.join("basis.json"), &est.kernel.basis.descriptor())?;
    write_with(&dir.join("kernel.csv"), |w| est.kernel.write_csv(w, Some(&params.kernel)))?;
    write_with(&dir.join("rho.csv"), |w| est.measure.write_csv(w))?;
    write_json(&dir.join("diagnostics.json"), &diag)?;
    report_time(&dir, "estimate", start)
}

fn write_fit(dir: &Path, stem: &str, fit: &RateFit) -> Result<()> {
    write_with(&dir.join(format!("{stem}.csv")), |w| fit.write_csv(w))?;
    write_json(&dir.join(format!("{stem}.json")), fit)
}

fn write_gap(dir: &Path, fits: &[GapFit]) -> Result<()> {
    write_with(&dir.join("gap_study.csv"), |w| {
        writeln!(w, "sigma,x,mean_error,std_error,n,lambda_min")?;
        for g in fits {
            let mut buf = Vec::new();
            g.fit.write_csv(&mut buf)?;
            let text = String::from_utf8(buf).expect("csv is utf-8");
            for line in text.lines().skip(1) {
                writeln!(w, "{},{line}", ipsk_core::io::fmt_f64(g.sigma))?;
            }
        }
        Ok(())
    })?;
    write_json(&dir.join("gap_study.json"), &fits)
}

fn run_convergence(cfg: &ExperimentConfig) -> Result<RateFit> {
    convergence_study(cfg, &cfg.study.m_list, cfg.study.replicates, cfg.seed)
}

fn run_gap(cfg: &ExperimentConfig) -> Result<Vec<GapFit>> {
    let s = &cfg.study;
    let sigmas = if s.sigma_list.is_empty() { vec![cfg.system.sigma] } else { s.sigma_list.clone() };
    let m = if s.gap_m == 0 { cfg.m } else { s.gap_m };
    run_gap_study(cfg, &s.gap_list, &sigmas, m, s.replicates, cfg.seed)
}

fn run_long_t(cfg: &ExperimentConfig) -> Result<RateFit> {
    let lt = cfg.study.long_t.as_ref().ok_or_else(|| Error::Config("configuration has no long-trajectory study".into()))?;
    long_t_study(cfg, &lt.grid, lt.c, lt.m_rho, lt.mode, cfg.study.replicates, cfg.seed)
}

pub fn convergence(cfg: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    let dir = out_dir(cfg)?;
    write_fit(&dir, "convergence", &run_convergence(cfg)?)?;
    report_time(&dir, "convergence", start)
}

pub fn gap_study(cfg: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    let dir = out_dir(cfg)?;
    write_gap(&dir, &run_gap(cfg)?)?;
    report_time(&dir, "gap-study", start)
}

pub fn long_t(cfg: &ExperimentConfig) -> Result<()> {
    let start = Instant::now();
    let dir = out_dir(cfg)?;
    write_fit(&dir, "long_t", &run_long_t(cfg)?)?;
    report_time(&dir, "long-t", start)
}

#[derive(Serialize)]
struct Summary<'a> {
    target: Target,
    scale: Scale,
    seed: u64,
    convergence: &'a RateFit,
    gap: &'a [GapFit],
    long_t: Option<&'a RateFit>,
    prediction: &'a PredictionReport,
}

pub fn reproduce(cfg: &ExperimentConfig, target: Target, scale: Scale) -> Result<()> {
    let start = Instant::now();
    let dir = out_dir(cfg)?;
    write_json(&dir.join("config.json"), &portable(cfg))?;
    let conv = run_convergence(cfg)?;
    write_fit(&dir, "convergence", &conv)?;
    eprintln!("convergence done: {:.1} s", start.elapsed().as_secs_f64());
    let gap = run_gap(cfg)?;
    write_gap(&dir, &gap)?;
    eprintln!("gap study done: {:.1} s", start.elapsed().as_secs_f64());
    let long = match cfg.study.long_t {
        Some(_) => {
            let fit = run_long_t(cfg)?;
            write_fit(&dir, "long_t", &fit)?;
            eprintln!("long-t study done: {:.1} s", start.elapsed().as_secs_f64());
            Some(fit)
        }
        None => None,
    };
    let ics = cfg.study.prediction_ics.max(1);
    let pred = prediction_study(cfg, ics, cfg.seed)?;
    write_json(&dir.join("prediction.json"), &pred)?;
    let summary = Summary { target, scale, seed: cfg.seed, convergence: &conv, gap: &gap, long_t: long.as_ref(), prediction: &pred };
    write_json(&dir.join("summary.json"), &summary)?;
    report_time(&dir, "reproduce", start)
}
