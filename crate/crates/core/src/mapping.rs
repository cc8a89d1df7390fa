//! Probabilistic multi-layer terrain map.
//!
//! Three layers share the world grid:
//!
//! - one log-odds occupancy layer per class, fused with binary Bayes updates;
//! - the running mean of observed model uncertainty;
//! - a count of human-labelled footprints covering each cell.
//!
//! Semantic layers store log-odds relative to the uniform class prior
//! `1/K`, so an unexplored cell holds all zeros and the layer probability is
//! `sigmoid(L + logit(1/K))`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::learner::{Prediction, SurrogateModel};
use crate::world::{Footprint, GridDims, Pose, RawImage};

/// Probability clamp applied before every log-odds update.
pub const P_MIN: f64 = 1e-4;
/// Absolute log-odds clamp.
pub const LOGODDS_LIMIT: f64 = 50.0;

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn sigmoid(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiLayerMap {
    pub dims: GridDims,
    pub num_classes: usize,
    /// Cell-major: `num_classes` relative log-odds per cell.
    pub semantic_logodds: Vec<f64>,
    pub uncertainty_mean: Vec<f64>,
    pub uncertainty_count: Vec<u32>,
    pub train_counts: Vec<u32>,
    pub explored: Vec<bool>,
}

/// Maximum-likelihood readout of the semantic layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlSemantics {
    /// `None` on unexplored cells.
    pub labels: Vec<Option<usize>>,
    /// Layer probability of the winning class (the prior on unexplored cells).
    pub probability: Vec<f64>,
}

/// Labels and uncertainties rendered from the map for one footprint.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoPatch {
    pub footprint: Footprint,
    pub labels: Vec<usize>,
    pub uncertainty: Vec<f64>,
    pub valid: Vec<bool>,
}

/// An image kept for map recomputation after retraining.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredObservation {
    pub pose: Pose,
    pub image: Arc<RawImage>,
    pub mission_index: usize,
}

impl MultiLayerMap {
    pub fn new(dims: GridDims, num_classes: usize) -> Self {
        let n = dims.len();
        Self {
            dims,
            num_classes,
            semantic_logodds: vec![0.0; n * num_classes],
            uncertainty_mean: vec![0.0; n],
            uncertainty_count: vec![0; n],
            train_counts: vec![0; n],
            explored: vec![false; n],
        }
    }

    /// Log-odds of the uniform class prior.
    pub fn prior_logodds(&self) -> f64 {
        logit(1.0 / self.num_classes as f64)
    }

    pub fn logodds(&self, cell: usize) -> &[f64] {
        &self.semantic_logodds[cell * self.num_classes..(cell + 1) * self.num_classes]
    }

    /// Posterior probability of layer `k` at `cell`.
    pub fn layer_probability(&self, cell: usize, k: usize) -> f64 {
        sigmoid(self.logodds(cell)[k] + self.prior_logodds())
    }

    fn check_footprint(&self, footprint: &Footprint, pixels: usize) -> Result<()> {
        if footprint.row + footprint.side > self.dims.rows || footprint.col + footprint.side > self.dims.cols {
            return Err(Error::FootprintTooLarge {
                side: footprint.side,
                rows: self.dims.rows,
                cols: self.dims.cols,
            });
        }
        if pixels != footprint.len() {
            return Err(Error::DimensionMismatch { expected: footprint.len(), actual: pixels });
        }
        Ok(())
    }

    /// Occupancy-grid update of every class layer over the footprint.
    pub fn update_semantic(&mut self, footprint: &Footprint, prediction: &Prediction) -> Result<()> {
        self.check_footprint(footprint, prediction.len())?;
        let k = self.num_classes;
        if prediction.num_classes != k {
            return Err(Error::DimensionMismatch { expected: k, actual: prediction.num_classes });
        }
        let prior = self.prior_logodds();
        for (i, (r, c)) in footprint.cells().enumerate() {
            let cell = self.dims.index(r, c);
            let layers = &mut self.semantic_logodds[cell * k..(cell + 1) * k];
            for (l, &p) in layers.iter_mut().zip(prediction.pixel(i)) {
                let p = p.clamp(P_MIN, 1.0 - P_MIN);
                *l = (*l + logit(p) - prior).clamp(-LOGODDS_LIMIT, LOGODDS_LIMIT);
            }
            self.explored[cell] = true;
        }
        Ok(())
    }

    /// Running-mean (maximum-likelihood) update of the uncertainty layer.
    pub fn update_uncertainty(&mut self, footprint: &Footprint, values: &[f64]) -> Result<()> {
        self.check_footprint(footprint, values.len())?;
        if let Some(&bad) = values.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(Error::UncertaintyOutOfRange(bad));
        }
        for ((r, c), &u) in footprint.cells().zip(values) {
            let cell = self.dims.index(r, c);
            self.uncertainty_count[cell] += 1;
            let n = self.uncertainty_count[cell] as f64;
            self.uncertainty_mean[cell] += (u - self.uncertainty_mean[cell]) / n;
        }
        Ok(())
    }

    /// Records one human-labelled footprint.
    pub fn increment_counts(&mut self, footprint: &Footprint) {
        for (r, c) in footprint.cells() {
            let cell = self.dims.index(r, c);
            self.train_counts[cell] += 1;
        }
    }

    /// Fuses a full model prediction of one image.
    pub fn integrate(&mut self, footprint: &Footprint, prediction: &Prediction) -> Result<()> {
        self.update_semantic(footprint, prediction)?;
        self.update_uncertainty(footprint, &prediction.uncertainty)
    }

    /// Winning class at `cell`, ties to the lowest id.
    pub fn ml_label(&self, cell: usize) -> Option<usize> {
        if !self.explored[cell] {
            return None;
        }
        Some(crate::learner::argmax(self.logodds(cell)))
    }

    pub fn ml_semantics(&self) -> MlSemantics {
        let prior = 1.0 / self.num_classes as f64;
        let (labels, probability) = (0..self.dims.len())
            .map(|cell| match self.ml_label(cell) {
                Some(k) => (Some(k), self.layer_probability(cell, k)),
                None => (None, prior),
            })
            .unzip();
        MlSemantics { labels, probability }
    }

    pub fn render_pseudo_patch(&self, pose: Pose, side: usize) -> Result<PseudoPatch> {
        let footprint = self.dims.footprint(pose, side)?;
        let n = footprint.len();
        let mut patch = PseudoPatch {
            footprint,
            labels: Vec::with_capacity(n),
            uncertainty: Vec::with_capacity(n),
            valid: Vec::with_capacity(n),
        };
        for (r, c) in footprint.cells() {
            let cell = self.dims.index(r, c);
            let label = self.ml_label(cell);
            patch.labels.push(label.unwrap_or(0));
            patch.valid.push(label.is_some());
            patch.uncertainty.push(if label.is_some() { self.uncertainty_mean[cell] } else { 1.0 });
        }
        Ok(patch)
    }

    /// Rebuilds the semantic and uncertainty layers from scratch by replaying
    /// `observations` through `model`; training counts are carried over.
    pub fn recomputed(&self, observations: &[StoredObservation], model: &SurrogateModel) -> Result<Self> {
        let mut map = recompute(observations, model, self.dims, self.num_classes)?;
        map.train_counts.clone_from(&self.train_counts);
        Ok(map)
    }
}

/// Fresh map built by replaying observations in capture order.
pub fn recompute(
    observations: &[StoredObservation],
    model: &SurrogateModel,
    dims: GridDims,
    num_classes: usize,
) -> Result<MultiLayerMap> {
    let mut map = MultiLayerMap::new(dims, num_classes);
    for obs in observations {
        let prediction = model.predict(&obs.image.features)?;
        map.integrate(&obs.image.footprint, &prediction)?;
    }
    Ok(map)
}
