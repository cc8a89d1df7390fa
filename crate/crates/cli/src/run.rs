//! Experiment dispatch and run-directory layout.
//!
//! A run directory holds `manifest.json`, the resolved `config.toml`, one
//! `arm_<i>.csv` per `(seed, start)` arm and `summary.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use terra_active::mission::{self, ArmResult, ExperimentSummary};
use terra_active::world::{self, GridDims};
use terra_active::{ExperimentConfig, PlannerKind, SemanticGridWorld, SupervisionMode};

use crate::config;
use crate::raster;

pub const VERSION: &str = concat!("terra-active v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Resolved config, identical to `config.toml`.
    pub config: String,
    /// Absent until the run finishes.
    pub runtime_seconds: Option<f64>,
}

/// Builds the world of one arm, from the label raster when configured.
pub fn world_for(config: &ExperimentConfig, seed: u64) -> Result<SemanticGridWorld> {
    match &config.label_raster {
        None => Ok(mission::build_world(config, seed)?),
        Some(path) => {
            let r = raster::load_label_raster(path, Some(config.world.num_classes))
                .with_context(|| format!("loading label raster {}", path.display()))?;
            let dims = GridDims::new(r.rows, r.cols, config.world.cell_size);
            Ok(world::world_from_labels(seed, &config.world, dims, r.labels)?)
        }
    }
}

/// Runs every arm, `jobs` at a time; results are in arm order.
pub fn run_arms(config: &ExperimentConfig, jobs: usize) -> Result<Vec<ArmResult>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    pool.install(|| {
        (0..config.arm_count())
            .into_par_iter()
            .map(|i| {
                let (seed, start) = config.arm(i);
                let world = world_for(config, seed)?;
                log::info!(
                    "{} / {}: arm {i} (seed {seed}, start {:.1},{:.1})",
                    config.planner_kind.name(),
                    config.supervision_mode.name(),
                    start.x,
                    start.y
                );
                Ok(mission::run_arm(config, &world, i)?)
            })
            .collect()
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn prepare(out: &Path, command: &str, config: &ExperimentConfig, config_path: Option<&Path>) -> Result<RunManifest> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    let resolved = config::to_toml(config)?;
    write(&out.join("config.toml"), &resolved)?;
    let manifest = RunManifest {
        version: VERSION.into(),
        command: command.into(),
        config_path: config_path.map(Path::to_path_buf),
        output_dir: out.to_path_buf(),
        config: resolved,
        runtime_seconds: None,
    };
    write(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn finish(out: &Path, mut manifest: RunManifest, started: Instant) -> Result<()> {
    manifest.runtime_seconds = Some(started.elapsed().as_secs_f64());
    write(&out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)
}

/// One experiment into `out`.
pub fn simulate(config: &ExperimentConfig, out: &Path, config_path: Option<&Path>, jobs: usize) -> Result<ExperimentSummary> {
    let started = Instant::now();
    let manifest = prepare(out, "simulate", config, config_path)?;
    let arms = run_arms(config, jobs)?;
    for arm in &arms {
        write(&out.join(format!("arm_{}.csv", arm.arm_index)), arm.log.to_csv())?;
    }
    let summary = mission::summarize(config, &arms);
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    finish(out, manifest, started)?;
    Ok(summary)
}

/// Mean curves of several experiments, one row per variant and mission.
fn curves_csv(variants: &[(String, ExperimentSummary)]) -> String {
    let mut s = String::from("variant,mission,images,human_pixels,pseudo_pixels,miou,miou_std,accuracy,accuracy_std\n");
    for (name, summary) in variants {
        for m in &summary.missions {
            s.push_str(&format!(
                "{name},{},{:.3},{:.3},{:.3},{:.6},{:.6},{:.6},{:.6}\n",
                m.mission, m.images.mean, m.human_pixels.mean, m.pseudo_pixels.mean, m.miou.mean, m.miou.std, m.accuracy.mean, m.accuracy.std
            ));
        }
    }
    s
}

fn compare(
    command: &str,
    variants: Vec<(String, ExperimentConfig)>,
    base: &ExperimentConfig,
    out: &Path,
    config_path: Option<&Path>,
    jobs: usize,
) -> Result<Vec<(String, ExperimentSummary)>> {
    let started = Instant::now();
    let manifest = prepare(out, command, base, config_path)?;
    let mut results = vec![];
    for (name, config) in variants {
        let summary = simulate(&config, &out.join(&name), config_path, jobs)?;
        log::info!("{name}: final miou {:.4} ± {:.4}", summary.final_miou.mean, summary.final_miou.std);
        results.push((name, summary));
    }
    let table: serde_json::Map<String, serde_json::Value> = results
        .iter()
        .map(|(n, s)| Ok((n.clone(), serde_json::to_value(s)?)))
        .collect::<Result<_>>()?;
    write(&out.join("summary.json"), serde_json::to_string_pretty(&table)?)?;
    write(&out.join("curves.csv"), curves_csv(&results))?;
    finish(out, manifest, started)?;
    Ok(results)
}

/// The five planners under the config's supervision mode.
pub fn compare_planners(config: &ExperimentConfig, out: &Path, config_path: Option<&Path>, jobs: usize) -> Result<Vec<(String, ExperimentSummary)>> {
    let variants = PlannerKind::ALL
        .iter()
        .map(|&k| (k.name().to_string(), ExperimentConfig { planner_kind: k, ..config.clone() }))
        .collect();
    compare("compare-planners", variants, config, out, config_path, jobs)
}

/// Full, semi and self supervision with the config's planner.
pub fn compare_supervision(config: &ExperimentConfig, out: &Path, config_path: Option<&Path>, jobs: usize) -> Result<Vec<(String, ExperimentSummary)>> {
    let variants = SupervisionMode::ALL
        .iter()
        .map(|&m| (m.name().to_string(), ExperimentConfig { supervision_mode: m, ..config.clone() }))
        .collect();
    compare("compare-supervision", variants, config, out, config_path, jobs)
}

/// Replays a saved run and writes the final map layers of every arm.
pub fn dump_map(run: &Path, out: &Path, jobs: usize) -> Result<Vec<PathBuf>> {
    let path = run.join("config.toml");
    if !path.is_file() {
        bail!("{} is not a run directory (no config.toml)", run.display());
    }
    let config = config::parse_config(&path)?;
    let arms = run_arms(&config, jobs)?;
    let mut dirs = vec![];
    for arm in &arms {
        let dir = out.join(format!("arm_{}", arm.arm_index));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let map = &arm.map;
        let (rows, cols) = (map.dims.rows, map.dims.cols);
        let k = map.num_classes;
        let ml = map.ml_semantics();
        let labels: Vec<i64> = ml.labels.iter().map(|l| l.map_or(-1, |v| v as i64)).collect();
        raster::write_csv(&dir.join("ml_labels.csv"), cols, &labels)?;
        let unexplored_as_k: Vec<usize> = ml.labels.iter().map(|l| l.unwrap_or(k)).collect();
        raster::write_pgm(&dir.join("ml_labels.pgm"), rows, cols, &unexplored_as_k, true)?;
        raster::write_csv(&dir.join("ml_probability.csv"), cols, &fmt6(&ml.probability))?;
        for c in 0..k {
            let layer: Vec<f64> = (0..map.dims.len()).map(|i| map.layer_probability(i, c)).collect();
            raster::write_csv(&dir.join(format!("class_{c}_probability.csv")), cols, &fmt6(&layer))?;
        }
        raster::write_csv(&dir.join("uncertainty.csv"), cols, &fmt6(&map.uncertainty_mean))?;
        raster::write_csv(&dir.join("train_counts.csv"), cols, &map.train_counts)?;
        let explored: Vec<usize> = map.explored.iter().map(|&e| if e { 255 } else { 0 }).collect();
        raster::write_pgm(&dir.join("explored.pgm"), rows, cols, &explored, true)?;
        let world = world_for(&config, arm.seed)?;
        raster::write_pgm(&dir.join("ground_truth.pgm"), rows, cols, &world.labels, true)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn fmt6(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| format!("{v:.6}")).collect()
}
