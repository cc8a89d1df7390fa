//! Semi-supervised active learning for semantic terrain monitoring.
//!
//! A robot flies budgeted missions over a terrain, fuses the predictions of
//! a probabilistic pixel classifier into a multi-layer map, and plans its next
//! viewpoints towards uncertain, rarely labelled terrain. After each mission
//! the collected images are labelled with a sparse mix of human labels and
//! map-rendered pseudo labels, the classifier is retrained and the map is
//! recomputed.
//!
//! Module layout:
//!
//! - [`world`]: synthetic terrain, poses and the downward camera footprint.
//! - [`learner`]: weighted Gaussian naive Bayes classifier and metrics.
//! - [`mapping`]: log-odds semantic layers, uncertainty and count layers.
//! - [`labelling`]: sparse human and pseudo pixel selection.
//! - [`planning`]: information criterion, travel cost and the five planners.
//! - [`mission`]: the mission loop and full multi-mission experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod labelling;
pub mod learner;
pub mod mapping;
pub mod mission;
pub mod planning;
pub mod seed;
pub mod world;

pub use error::{Error, Result};
pub use learner::{LabelSource, LabelledPixel, SurrogateModel};
pub use mapping::MultiLayerMap;
pub use mission::{ExperimentConfig, MissionLog, PlannerKind, SupervisionMode};
pub use planning::PlannerConfig;
pub use world::{Footprint, GridDims, Pose, SemanticGridWorld, WorldSpec};
