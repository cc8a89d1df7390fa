//! Mission loop and multi-mission experiments.
//!
//! One experiment arm is a `(world seed, start pose)` pair. Every arm runs
//! `num_missions` budget-limited missions; after each mission the collected
//! images are labelled, the learner is retrained from scratch on the
//! cumulative training set and the map is recomputed from every stored image.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelling::{self, LabellingConfig};
use crate::learner::{self, ClassPresence, LabelSource, LabelledPixel, LearnerConfig, Metrics, SurrogateModel};
use crate::mapping::{MultiLayerMap, StoredObservation};
use crate::planning::{self, BudgetState, Corner, PlanOutcome, PlannerConfig};
use crate::seed;
use crate::world::{self, Pose, RawImage, SemanticGridWorld, WorldSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupervisionMode {
    /// Dense human labels on every collected image.
    Full,
    /// Sparse human labels plus map pseudo labels.
    Semi,
    /// Map pseudo labels only, on top of the seed set.
    #[serde(rename = "self")]
    SelfSupervised,
}

impl SupervisionMode {
    pub const ALL: [SupervisionMode; 3] = [Self::Full, Self::Semi, Self::SelfSupervised];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Semi => "semi",
            Self::SelfSupervised => "self",
        }
    }
}

impl std::str::FromStr for SupervisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::InvalidConfig {
            field: "supervision_mode".into(),
            reason: format!("unknown mode `{s}` (expected full, semi or self)"),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Coverage,
    Local,
    Frontier,
    Optimization,
    Sampling,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 5] =
        [Self::Coverage, Self::Local, Self::Frontier, Self::Optimization, Self::Sampling];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Coverage => "coverage",
            Self::Local => "local",
            Self::Frontier => "frontier",
            Self::Optimization => "optimization",
            Self::Sampling => "sampling",
        }
    }
}

impl std::str::FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::InvalidConfig {
            field: "planner_kind".into(),
            reason: format!("unknown planner `{s}`"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub num_missions: usize,
    /// Seconds per mission.
    pub budget_seconds: f64,
    pub supervision_mode: SupervisionMode,
    pub planner_kind: PlannerKind,
    /// Camera footprint side in cells.
    pub footprint_cells: usize,
    pub start_poses: Vec<Pose>,
    /// One world per seed; every seed is paired with every start pose.
    pub seeds: Vec<u64>,
    /// Uniformly random human-labelled cells included in every retraining.
    pub n_seed: usize,
    pub pseudo_weight: f64,
    /// Optional ground-truth label raster replacing the generated blobs.
    /// Resolved by the front end; `run_experiment` ignores it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_raster: Option<PathBuf>,
    pub world: WorldSpec,
    pub learner: LearnerConfig,
    pub labelling: LabellingConfig,
    pub planner: PlannerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_missions: 10,
            budget_seconds: 1800.0,
            supervision_mode: SupervisionMode::Semi,
            planner_kind: PlannerKind::Frontier,
            footprint_cells: 20,
            start_poses: vec![Pose::new(10.0, 10.0)],
            seeds: vec![1, 2, 3],
            n_seed: 100,
            pseudo_weight: 1.0,
            label_raster: None,
            world: WorldSpec::default(),
            learner: LearnerConfig::default(),
            labelling: LabellingConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale fixture used by the planner and supervision comparisons:
    /// 128×128 world, K=4, f=20, three seeds, ten missions, full supervision.
    pub fn reference() -> Self {
        let mut c = Self {
            supervision_mode: SupervisionMode::Full,
            budget_seconds: 900.0,
            n_seed: 50,
            ..Self::default()
        };
        c.world.drift_amplitude = 0.6;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::InvalidConfig { field: field.into(), reason });
        if self.num_missions == 0 {
            return bad("num_missions", "must be at least 1".into());
        }
        if !(self.budget_seconds >= 0.0) || !self.budget_seconds.is_finite() {
            return bad("budget_seconds", format!("must be a finite value >= 0, got {}", self.budget_seconds));
        }
        if self.start_poses.is_empty() {
            return bad("start_poses", "need at least one start pose".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds", "need at least one seed".into());
        }
        if !(self.pseudo_weight > 0.0) {
            return bad("pseudo_weight", format!("must be > 0, got {}", self.pseudo_weight));
        }
        if !(self.learner.variance_floor > 0.0) {
            return bad("learner.variance_floor", "must be > 0".into());
        }
        if !(self.learner.prior_smoothing >= 0.0) {
            return bad("learner.prior_smoothing", "must be >= 0".into());
        }
        if !(self.planner.measure_time > 0.0) {
            return bad("planner.measure_time", "must be > 0 so that missions terminate".into());
        }
        self.labelling.validate()?;
        self.planner.validate()?;
        if self.label_raster.is_none() {
            self.world.validate()?;
            let dims = self.world.dims();
            if self.footprint_cells == 0 || self.footprint_cells > dims.rows.min(dims.cols) {
                return bad("footprint_cells", format!("{} does not fit the world", self.footprint_cells));
            }
            if self.n_seed > dims.len() {
                return bad("n_seed", "exceeds the number of world cells".into());
            }
        }
        if self.labelling.alpha > self.footprint_cells * self.footprint_cells {
            return bad("labelling.alpha", "exceeds the pixels per image".into());
        }
        Ok(())
    }

    pub fn arm_count(&self) -> usize {
        self.seeds.len() * self.start_poses.len()
    }

    /// `(world seed, start pose)` of arm `index`.
    pub fn arm(&self, index: usize) -> (u64, Pose) {
        let n = self.start_poses.len();
        (self.seeds[index / n], self.start_poses[index % n])
    }
}

/// Cumulative labelled pixels of one arm.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub seed: Vec<LabelledPixel>,
    pub human: Vec<LabelledPixel>,
    /// Re-derived after every mission.
    pub pseudo: Vec<LabelledPixel>,
}

impl TrainingSet {
    pub fn all(&self) -> Vec<LabelledPixel> {
        self.seed.iter().chain(&self.human).chain(&self.pseudo).cloned().collect()
    }

    /// Seed plus human pixels.
    pub fn human_pixels(&self) -> usize {
        self.seed.len() + self.human.len()
    }
}

/// `n` distinct uniformly random ground-truth cells.
pub fn seed_set(world: &SemanticGridWorld, n: usize, seed: u64) -> Vec<LabelledPixel> {
    let mut rng = seed::rng(seed, "seed-set", 0);
    let mut cells = rand::seq::index::sample(&mut rng, world.labels.len(), n.min(world.labels.len())).into_vec();
    cells.sort_unstable();
    cells
        .into_iter()
        .map(|i| {
            let (r, c) = (i / world.dims.cols, i % world.dims.cols);
            LabelledPixel {
                cell: (r, c),
                feature: world.feature(r, c).to_vec(),
                label: world.label(r, c),
                weight: 1.0,
                source: LabelSource::Seed,
            }
        })
        .collect()
}

/// What one mission produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MissionOutcome {
    pub images: Vec<Arc<RawImage>>,
    pub observations: Vec<StoredObservation>,
    pub poses: Vec<Pose>,
    /// Cumulative spend after every executed pose.
    pub ledger: Vec<f64>,
    pub spent: f64,
}

/// Per-mission planner inputs.
#[derive(Clone, Debug)]
pub struct MissionSetup<'a> {
    pub planner_kind: PlannerKind,
    pub planner: &'a PlannerConfig,
    pub footprint: usize,
    pub budget: f64,
    pub start: Pose,
    pub mission_index: usize,
}

/// Executes one mission, fusing every image into `map` as it is taken.
pub fn run_mission(
    world: &SemanticGridWorld,
    map: &mut MultiLayerMap,
    model: &SurrogateModel,
    setup: &MissionSetup<'_>,
) -> Result<MissionOutcome> {
    let side = setup.footprint;
    let config = setup.planner;
    let dims = world.dims;
    let start = dims.clamp_pose(setup.start, side);
    let mut budget = BudgetState::new(setup.budget, start);
    let mut out = MissionOutcome::default();

    let mut execute = |pose: Pose, budget: &mut BudgetState, map: &mut MultiLayerMap| -> Result<bool> {
        let cost = planning::travel_cost(&budget.current, &pose, config);
        if !budget.can_afford(cost) {
            return Ok(false);
        }
        budget.spent += cost;
        budget.current = pose;
        let image = Arc::new(world::capture(world, pose, side)?);
        let prediction = model.predict(&image.features)?;
        map.integrate(&image.footprint, &prediction)?;
        out.observations.push(StoredObservation {
            pose,
            image: Arc::clone(&image),
            mission_index: setup.mission_index,
        });
        out.images.push(image);
        out.poses.push(pose);
        out.ledger.push(budget.spent);
        Ok(true)
    };

    if setup.planner_kind == PlannerKind::Coverage {
        let path = planning::plan_coverage(&dims, side, Corner::nearest(&dims, start))?;
        for pose in path.poses {
            if !execute(pose, &mut budget, map)? {
                break;
            }
        }
    } else if execute(start, &mut budget, map)? {
        let mut heading = None;
        loop {
            let outcome = match setup.planner_kind {
                PlannerKind::Local => {
                    let (o, h) = planning::plan_local(map, &budget, side, config, heading)?;
                    heading = h;
                    o
                }
                PlannerKind::Frontier => planning::plan_frontier(map, &budget, side, config)?,
                PlannerKind::Optimization => planning::plan_optimization(map, &budget, side, config)?,
                PlannerKind::Sampling => planning::plan_sampling(map, &budget, side, config)?,
                PlannerKind::Coverage => unreachable!("handled above"),
            };
            match outcome {
                PlanOutcome::Move(pose) => {
                    if !execute(pose, &mut budget, map)? {
                        break;
                    }
                }
                PlanOutcome::End => break,
            }
        }
    }
    out.spent = budget.spent;
    Ok(out)
}

/// Seeds of the labelling draws of one arm.
#[derive(Clone, Copy, Debug)]
pub struct LabelSeeds {
    pub base: u64,
    pub mission_index: usize,
    /// Index of the first new image among all images of the arm.
    pub first_image: usize,
}

/// Labels the new images and re-derives pseudo labels for all images.
#[allow(clippy::too_many_arguments)]
pub fn post_mission_update(
    new_images: &[Arc<RawImage>],
    observations: &[StoredObservation],
    map: &mut MultiLayerMap,
    model: &SurrogateModel,
    training: &mut TrainingSet,
    mode: SupervisionMode,
    config: &ExperimentConfig,
    seeds: LabelSeeds,
) -> Result<()> {
    let human = |img: &RawImage, pixel: usize| {
        let fp = img.footprint;
        LabelledPixel {
            cell: (fp.row + pixel / fp.side, fp.col + pixel % fp.side),
            feature: img.pixel_feature(pixel).to_vec(),
            label: img.gt[pixel],
            weight: 1.0,
            source: LabelSource::Human,
        }
    };
    match mode {
        SupervisionMode::Full => {
            for img in new_images {
                training.human.extend((0..img.gt.len()).map(|p| human(img, p)));
                map.increment_counts(&img.footprint);
            }
        }
        SupervisionMode::Semi => {
            for (j, img) in new_images.iter().enumerate() {
                let predicted = model.predict(&img.features)?.labels();
                let mut rng = seed::rng(seeds.base, "human", (seeds.first_image + j) as u64);
                let side = img.side();
                let picks = labelling::select_human_pixels(&predicted, side, &config.labelling, &mut rng)?;
                training.human.extend(picks.into_iter().map(|(r, c)| human(img, r * side + c)));
                map.increment_counts(&img.footprint);
            }
        }
        SupervisionMode::SelfSupervised => {}
    }

    if mode != SupervisionMode::Full {
        training.pseudo.clear();
        let stream = format!("pseudo-{}", seeds.mission_index);
        for (i, obs) in observations.iter().enumerate() {
            let img = &obs.image;
            let side = img.side();
            let patch = map.render_pseudo_patch(obs.pose, side)?;
            debug_assert_eq!(patch.footprint, img.footprint);
            let mut rng = seed::rng(seeds.base, &stream, i as u64);
            let picks =
                labelling::select_pseudo_pixels(&patch.uncertainty, &patch.valid, side, &config.labelling, &mut rng)?;
            training.pseudo.extend(picks.into_iter().map(|(r, c)| {
                let pixel = r * side + c;
                LabelledPixel {
                    cell: (img.footprint.row + r, img.footprint.col + c),
                    feature: img.pixel_feature(pixel).to_vec(),
                    label: patch.labels[pixel],
                    weight: config.pseudo_weight,
                    source: LabelSource::Pseudo,
                }
            }));
        }
    }
    Ok(())
}

/// Retrains on the full training set and replays all observations.
pub fn retrain_and_recompute(
    training: &TrainingSet,
    observations: &[StoredObservation],
    map: &MultiLayerMap,
    config: &LearnerConfig,
) -> Result<(SurrogateModel, MultiLayerMap)> {
    let model = learner::train(&training.all(), map.num_classes, config)?;
    let map = map.recomputed(observations, &model)?;
    Ok((model, map))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionRecord {
    /// 1-based.
    pub mission: usize,
    /// Cumulative images collected.
    pub images: usize,
    /// Cumulative human-labelled pixels, seed set included.
    pub human_pixels: usize,
    /// Pseudo-labelled pixels in the current training set.
    pub pseudo_pixels: usize,
    pub budget_spent: f64,
    pub miou: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MissionLog {
    pub records: Vec<MissionRecord>,
}

pub const CSV_HEADER: &str = "mission,images,human_pixels,pseudo_pixels,budget_spent,miou,accuracy";

impl MissionLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.6}",
                r.mission, r.images, r.human_pixels, r.pseudo_pixels, r.budget_spent, r.miou, r.accuracy
            )
            .expect("writing to a String");
        }
        s
    }

    pub fn last(&self) -> Option<&MissionRecord> {
        self.records.last()
    }
}

/// Result of one `(seed, start)` arm.
#[derive(Clone, Debug)]
pub struct ArmResult {
    pub arm_index: usize,
    pub seed: u64,
    pub start: Pose,
    pub log: MissionLog,
    /// Metrics of the seed-only model before the first mission.
    pub initial: Metrics,
    pub trajectories: Vec<Vec<Pose>>,
    pub ledgers: Vec<Vec<f64>>,
    pub map: MultiLayerMap,
    pub model: SurrogateModel,
}

/// Runs all missions of one arm on `world`.
pub fn run_arm(config: &ExperimentConfig, world: &SemanticGridWorld, arm_index: usize) -> Result<ArmResult> {
    let (seed, start) = config.arm(arm_index);
    let arm = arm_index as u64;
    let mut training = TrainingSet { seed: seed_set(world, config.n_seed, seed), ..TrainingSet::default() };
    let mut model = learner::train(&training.all(), world.num_classes, &config.learner)?;
    let initial = learner::evaluate(&model, world, ClassPresence::default())?;
    let mut map = MultiLayerMap::new(world.dims, world.num_classes);
    let mut observations: Vec<StoredObservation> = vec![];
    let label_base = seed::derive_seed(seed ^ config.labelling.rng_seed, "labelling", arm);
    let planner_base = seed::derive_seed(seed ^ config.planner.rng_seed, "planner", arm);

    let mut result = ArmResult {
        arm_index,
        seed,
        start,
        log: MissionLog::default(),
        initial,
        trajectories: vec![],
        ledgers: vec![],
        map: map.clone(),
        model: model.clone(),
    };
    for mission in 0..config.num_missions {
        let planner = PlannerConfig {
            rng_seed: seed::derive_seed(planner_base, "mission", mission as u64),
            ..config.planner.clone()
        };
        let setup = MissionSetup {
            planner_kind: config.planner_kind,
            planner: &planner,
            footprint: config.footprint_cells,
            budget: config.budget_seconds,
            start,
            mission_index: mission,
        };
        let outcome = run_mission(world, &mut map, &model, &setup)?;
        let first_image = observations.len();
        observations.extend(outcome.observations.iter().cloned());
        post_mission_update(
            &outcome.images,
            &observations,
            &mut map,
            &model,
            &mut training,
            config.supervision_mode,
            config,
            LabelSeeds { base: label_base, mission_index: mission, first_image },
        )?;
        (model, map) = retrain_and_recompute(&training, &observations, &map, &config.learner)?;
        let metrics = learner::evaluate(&model, world, ClassPresence::default())?;
        log::debug!(
            "arm {arm_index} mission {}: {} images, spent {:.1}s, miou {:.4}",
            mission + 1,
            outcome.images.len(),
            outcome.spent,
            metrics.miou
        );
        result.log.records.push(MissionRecord {
            mission: mission + 1,
            images: observations.len(),
            human_pixels: training.human_pixels(),
            pseudo_pixels: training.pseudo.len(),
            budget_spent: outcome.spent,
            miou: metrics.miou,
            accuracy: metrics.accuracy,
        });
        result.trajectories.push(outcome.poses);
        result.ledgers.push(outcome.ledger);
    }
    result.map = map;
    result.model = model;
    Ok(result)
}

/// Builds the world of a seed from the config's generator settings.
pub fn build_world(config: &ExperimentConfig, seed: u64) -> Result<SemanticGridWorld> {
    world::generate_world(seed, &config.world)
}

/// Runs every arm sequentially on generated worlds.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ArmResult>> {
    config.validate()?;
    (0..config.arm_count())
        .map(|i| {
            let world = build_world(config, config.arm(i).0)?;
            run_arm(config, &world, i)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub mission: usize,
    pub images: MeanStd,
    pub human_pixels: MeanStd,
    pub pseudo_pixels: MeanStd,
    pub budget_spent: MeanStd,
    pub miou: MeanStd,
    pub accuracy: MeanStd,
}

/// Across-arm aggregate of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub planner: PlannerKind,
    pub supervision: SupervisionMode,
    pub arms: usize,
    pub missions: Vec<MissionSummary>,
    pub final_miou: MeanStd,
    pub final_accuracy: MeanStd,
}

pub fn summarize(config: &ExperimentConfig, arms: &[ArmResult]) -> ExperimentSummary {
    let stat = |m: usize, f: &dyn Fn(&MissionRecord) -> f64| {
        MeanStd::of(&arms.iter().filter_map(|a| a.log.records.get(m)).map(f).collect::<Vec<_>>())
    };
    let missions: Vec<MissionSummary> = (0..config.num_missions)
        .map(|m| MissionSummary {
            mission: m + 1,
            images: stat(m, &|r| r.images as f64),
            human_pixels: stat(m, &|r| r.human_pixels as f64),
            pseudo_pixels: stat(m, &|r| r.pseudo_pixels as f64),
            budget_spent: stat(m, &|r| r.budget_spent),
            miou: stat(m, &|r| r.miou),
            accuracy: stat(m, &|r| r.accuracy),
        })
        .collect();
    let last = missions.last().cloned();
    ExperimentSummary {
        planner: config.planner_kind,
        supervision: config.supervision_mode,
        arms: arms.len(),
        final_miou: last.as_ref().map(|l| l.miou).unwrap_or_default(),
        final_accuracy: last.as_ref().map(|l| l.accuracy).unwrap_or_default(),
        missions,
    }
}
