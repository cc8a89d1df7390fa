//! Synthetic terrain and the downward-facing camera model.
//!
//! The terrain is a single-layer grid: one cell per image pixel at capture
//! resolution. Ground-truth classes form contiguous blobs (nearest-seed
//! Voronoi regions) and every cell carries a feature vector drawn from an
//! isotropic Gaussian around its class mean.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Spatial layout of a raster: `rows` along y, `cols` along x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
    /// Meters per cell.
    pub cell_size: f64,
}

impl GridDims {
    pub fn new(rows: usize, cols: usize, cell_size: f64) -> Self {
        Self { rows, cols, cell_size }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn width_m(&self) -> f64 {
        self.cols as f64 * self.cell_size
    }

    pub fn height_m(&self) -> f64 {
        self.rows as f64 * self.cell_size
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Pose {
        Pose::new(
            (col as f64 + 0.5) * self.cell_size,
            (row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn check_side(&self, side: usize) -> Result<()> {
        if side == 0 || side > self.rows || side > self.cols {
            return Err(Error::FootprintTooLarge { side, rows: self.rows, cols: self.cols });
        }
        Ok(())
    }

    /// Clamps a pose so that a `side`-cell footprint centred on it stays
    /// inside the world.
    pub fn clamp_pose(&self, pose: Pose, side: usize) -> Pose {
        let half = side as f64 * self.cell_size / 2.0;
        let clamp = |v: f64, extent: f64| {
            if extent <= 2.0 * half {
                extent / 2.0
            } else {
                v.clamp(half, extent - half)
            }
        };
        Pose::new(clamp(pose.x, self.width_m()), clamp(pose.y, self.height_m()))
    }

    /// Footprint of a `side`×`side` camera at `pose` after clamping.
    ///
    /// The centre cell is the cell containing the pose; the origin is
    /// `centre - side / 2` (integer floor), pushed back inside the bounds.
    pub fn footprint(&self, pose: Pose, side: usize) -> Result<Footprint> {
        self.check_side(side)?;
        let pose = self.clamp_pose(pose, side);
        let cell = |v: f64, n: usize| ((v / self.cell_size).floor().max(0.0) as usize).min(n - 1);
        let (center_row, center_col) = (cell(pose.y, self.rows), cell(pose.x, self.cols));
        let origin = |c: usize, n: usize| c.saturating_sub(side / 2).min(n - side);
        Ok(Footprint {
            row: origin(center_row, self.rows),
            col: origin(center_col, self.cols),
            side,
        })
    }
}

/// Robot position at fixed altitude, in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned square of cells imaged from one pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Footprint {
    pub row: usize,
    pub col: usize,
    pub side: usize,
}

impl Footprint {
    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.side && col >= self.col && col < self.col + self.side
    }

    /// Cells in row-major order, matching the pixel order of a captured patch.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row..self.row + self.side)
            .flat_map(move |r| (self.col..self.col + self.side).map(move |c| (r, c)))
    }
}

/// Cells seen from `pose`.
pub fn visible_cells(pose: Pose, side: usize, dims: &GridDims) -> Result<Footprint> {
    dims.footprint(pose, side)
}

/// Parameters of the synthetic terrain generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub width_cells: usize,
    pub height_cells: usize,
    pub cell_size: f64,
    pub num_classes: usize,
    /// Typical blob diameter in cells.
    pub blob_scale: f64,
    pub feature_dim: usize,
    /// Pairwise distance between class means.
    pub class_separation: f64,
    /// Per-dimension standard deviation around the class mean.
    pub noise_sigma: f64,
    /// Relative class frequencies of blob seeds; uniform when absent.
    pub class_weights: Option<Vec<f64>>,
    /// Standard deviation of a smooth, class-independent appearance field
    /// added to every feature (terrain-wide illumination and texture
    /// changes). Zero disables it.
    pub drift_amplitude: f64,
    /// Typical wavelength of the appearance field in cells.
    pub drift_wavelength: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            width_cells: 128,
            height_cells: 128,
            cell_size: 1.0,
            num_classes: 4,
            blob_scale: 12.0,
            feature_dim: 4,
            class_separation: 3.0,
            noise_sigma: 1.0,
            class_weights: None,
            drift_amplitude: 0.0,
            drift_wavelength: 96.0,
        }
    }
}

impl WorldSpec {
    pub fn dims(&self) -> GridDims {
        GridDims::new(self.height_cells, self.width_cells, self.cell_size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidWorld(m));
        if self.width_cells < 16 || self.height_cells < 16 {
            return bad(format!(
                "dimensions must be at least 16x16, got {}x{}",
                self.width_cells, self.height_cells
            ));
        }
        self.validate_features()?;
        if !(self.blob_scale >= 1.0) {
            return bad(format!("blob_scale must be >= 1, got {}", self.blob_scale));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.num_classes {
                return bad(format!("{} class weights for {} classes", w.len(), self.num_classes));
            }
            if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return bad("class weights must be positive".into());
            }
        }
        Ok(())
    }

    /// The subset of checks that applies to worlds built from a label raster.
    fn validate_features(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidWorld(m));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1".into());
        }
        if !(self.cell_size > 0.0) {
            return bad(format!("cell_size must be positive, got {}", self.cell_size));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.class_separation > 0.0) || !self.class_separation.is_finite() {
            return bad(format!("class_separation must be > 0, got {}", self.class_separation));
        }
        if !(self.drift_amplitude >= 0.0) || !self.drift_amplitude.is_finite() {
            return bad(format!("drift_amplitude must be >= 0, got {}", self.drift_amplitude));
        }
        if !(self.drift_wavelength > 0.0) {
            return bad(format!("drift_wavelength must be > 0, got {}", self.drift_wavelength));
        }
        Ok(())
    }
}

/// Ground truth terrain: class raster plus per-cell features.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticGridWorld {
    pub dims: GridDims,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Row-major class ids.
    pub labels: Vec<usize>,
    /// Row-major, `feature_dim` values per cell.
    pub features: Vec<f64>,
    pub class_means: Vec<Vec<f64>>,
}

impl SemanticGridWorld {
    #[inline]
    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[self.dims.index(row, col)]
    }

    #[inline]
    pub fn feature(&self, row: usize, col: usize) -> &[f64] {
        let i = self.dims.index(row, col) * self.feature_dim;
        &self.features[i..i + self.feature_dim]
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Builds a blob world. Pure function of `(seed, spec)`.
pub fn generate_world(seed: u64, spec: &WorldSpec) -> Result<SemanticGridWorld> {
    spec.validate()?;
    let dims = spec.dims();
    let k = spec.num_classes;
    let mut rng = seed::rng(seed, "world-labels", 0);

    let area = (dims.rows * dims.cols) as f64;
    let n_seeds = ((area / (spec.blob_scale * spec.blob_scale)).round() as usize).max(k);
    let seeds: Vec<(f64, f64)> = (0..n_seeds)
        .map(|_| (rng.random::<f64>() * dims.rows as f64, rng.random::<f64>() * dims.cols as f64))
        .collect();

    // The first k blobs take every class once so that no class is missing.
    let mut classes: Vec<usize> = (0..k).collect();
    classes.shuffle(&mut rng);
    let sampler = match &spec.class_weights {
        Some(w) => WeightedIndex::new(w).map_err(|e| Error::InvalidWorld(e.to_string()))?,
        None => WeightedIndex::new(vec![1.0; k]).expect("uniform weights"),
    };
    classes.extend((k..n_seeds).map(|_| sampler.sample(&mut rng)));

    let mut labels = vec![0; dims.len()];
    for row in 0..dims.rows {
        for col in 0..dims.cols {
            let (y, x) = (row as f64 + 0.5, col as f64 + 0.5);
            let mut best = (f64::INFINITY, 0);
            for (i, &(sy, sx)) in seeds.iter().enumerate() {
                let d = (sy - y) * (sy - y) + (sx - x) * (sx - x);
                if d < best.0 {
                    best = (d, i);
                }
            }
            labels[dims.index(row, col)] = classes[best.1];
        }
    }

    build_world(seed, spec, dims, labels)
}

/// Wraps an existing label raster (e.g. loaded from disk) into a world with
/// synthesized features.
pub fn world_from_labels(
    seed: u64,
    spec: &WorldSpec,
    dims: GridDims,
    labels: Vec<usize>,
) -> Result<SemanticGridWorld> {
    spec.validate_features()?;
    if labels.len() != dims.len() || dims.is_empty() {
        return Err(Error::DimensionMismatch { expected: dims.len(), actual: labels.len() });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= spec.num_classes) {
        return Err(Error::LabelOutOfRange { label, num_classes: spec.num_classes });
    }
    build_world(seed, spec, dims, labels)
}

fn build_world(
    seed: u64,
    spec: &WorldSpec,
    dims: GridDims,
    labels: Vec<usize>,
) -> Result<SemanticGridWorld> {
    let d = spec.feature_dim;
    let class_means = class_means(
        spec.num_classes,
        d,
        spec.class_separation,
        &mut seed::rng(seed, "world-means", 0),
    );
    let drift = AppearanceField::new(d, spec, &mut seed::rng(seed, "world-drift", 0));
    let mut noise = seed::rng(seed, "world-noise", 0);
    let mut features = Vec::with_capacity(labels.len() * d);
    for (i, &l) in labels.iter().enumerate() {
        let (row, col) = (i / dims.cols, i % dims.cols);
        for (j, mean) in class_means[l].iter().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut noise);
            features.push(mean + spec.noise_sigma * eps + drift.value(j, row, col));
        }
    }
    Ok(SemanticGridWorld {
        dims,
        num_classes: spec.num_classes,
        feature_dim: d,
        labels,
        features,
        class_means,
    })
}

/// Sum of a few random plane waves per feature dimension, scaled so that
/// each dimension has standard deviation `drift_amplitude`.
struct AppearanceField {
    amplitude: f64,
    /// Per dimension: `(kx, ky, phase)` of each wave.
    waves: Vec<Vec<(f64, f64, f64)>>,
}

impl AppearanceField {
    const WAVES: usize = 3;

    fn new<R: Rng>(d: usize, spec: &WorldSpec, rng: &mut R) -> Self {
        let tau = std::f64::consts::TAU;
        let waves = (0..d)
            .map(|_| {
                (0..Self::WAVES)
                    .map(|_| {
                        let heading = rng.random::<f64>() * tau;
                        let wavelength = spec.drift_wavelength * (0.75 + 0.75 * rng.random::<f64>());
                        let k = tau / wavelength;
                        (k * heading.cos(), k * heading.sin(), rng.random::<f64>() * tau)
                    })
                    .collect()
            })
            .collect();
        Self { amplitude: spec.drift_amplitude * (2.0 / Self::WAVES as f64).sqrt(), waves }
    }

    fn value(&self, dim: usize, row: usize, col: usize) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
        self.amplitude * self.waves[dim].iter().map(|(kx, ky, p)| (kx * x + ky * y + p).sin()).sum::<f64>()
    }
}

/// Class means with minimum pairwise distance `separation`.
///
/// With `d >= k` the means are scaled orthonormal directions (a regular
/// simplex, every pair exactly `separation` apart). Otherwise they sit on a
/// circle in the first two dimensions, or on a line when `d == 1`.
pub fn class_means<R: Rng>(k: usize, d: usize, separation: f64, rng: &mut R) -> Vec<Vec<f64>> {
    if d >= k {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
        while basis.len() < k {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                basis.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        let scale = separation / std::f64::consts::SQRT_2;
        basis
            .into_iter()
            .map(|b| b.into_iter().map(|x| x * scale).collect())
            .collect()
    } else if d >= 2 {
        let radius = separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let mut slots: Vec<usize> = (0..k).collect();
        slots.shuffle(rng);
        slots
            .into_iter()
            .map(|s| {
                let a = phase + std::f64::consts::TAU * s as f64 / k as f64;
                let mut m = vec![0.0; d];
                m[0] = radius * a.cos();
                m[1] = radius * a.sin();
                m
            })
            .collect()
    } else {
        let mut slots: Vec<usize> = (0..k).collect();
        slots.shuffle(rng);
        slots.into_iter().map(|s| vec![s as f64 * separation]).collect()
    }
}

/// One captured training image.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub footprint: Footprint,
    pub feature_dim: usize,
    /// Row-major ground truth, `side * side` entries.
    pub gt: Vec<usize>,
    /// Row-major features, `side * side * feature_dim` entries.
    pub features: Vec<f64>,
}

impl RawImage {
    pub fn side(&self) -> usize {
        self.footprint.side
    }

    pub fn pixel_feature(&self, pixel: usize) -> &[f64] {
        &self.features[pixel * self.feature_dim..(pixel + 1) * self.feature_dim]
    }
}

/// Copies the `side`×`side` patch seen from `pose`.
pub fn capture(world: &SemanticGridWorld, pose: Pose, side: usize) -> Result<RawImage> {
    let footprint = world.dims.footprint(pose, side)?;
    let mut gt = Vec::with_capacity(footprint.len());
    let mut features = Vec::with_capacity(footprint.len() * world.feature_dim);
    for (r, c) in footprint.cells() {
        gt.push(world.label(r, c));
        features.extend_from_slice(world.feature(r, c));
    }
    Ok(RawImage { footprint, feature_dim: world.feature_dim, gt, features })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec64() -> WorldSpec {
        WorldSpec {
            width_cells: 64,
            height_cells: 64,
            num_classes: 4,
            blob_scale: 8.0,
            ..WorldSpec::default()
        }
    }

    #[test]
    fn same_seed_gives_identical_worlds() {
        let a = generate_world(3, &spec64()).unwrap();
        let b = generate_world(3, &spec64()).unwrap();
        assert_eq!(a, b);
        let c = generate_world(4, &spec64()).unwrap();
        assert_ne!(a.labels, c.labels);
    }

    #[test]
    fn zero_noise_puts_features_on_class_means() {
        let spec = WorldSpec { noise_sigma: 0.0, ..spec64() };
        let w = generate_world(1, &spec).unwrap();
        for r in 0..w.dims.rows {
            for c in 0..w.dims.cols {
                assert_eq!(w.feature(r, c), w.class_means[w.label(r, c)].as_slice());
            }
        }
    }

    #[test]
    fn regression_histogram_seed_one() {
        let w = generate_world(1, &spec64()).unwrap();
        let h = w.class_histogram();
        let n = w.labels.len();
        assert_eq!(h.iter().sum::<usize>(), n);
        for (k, &count) in h.iter().enumerate() {
            assert!(count * 100 >= n, "class {k} covers only {count} of {n} cells");
        }
        assert_eq!(h, REGRESSION_HISTOGRAM);
    }

    // Recorded from the generator on the 64x64, K=4, blob_scale=8, seed=1 fixture.
    const REGRESSION_HISTOGRAM: [usize; 4] = [1529, 1068, 1036, 463];

    #[test]
    fn means_are_separated() {
        let mut rng = seed::rng(0, "t", 0);
        for &(k, d) in &[(4, 4), (4, 8), (5, 2), (3, 1), (6, 3)] {
            let sep = 2.5;
            let m = class_means(k, d, sep, &mut rng);
            assert_eq!(m.len(), k);
            for i in 0..k {
                assert_eq!(m[i].len(), d);
                for j in i + 1..k {
                    let dist = m[i].iter().zip(&m[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    assert!(dist >= sep - 1e-9, "k={k} d={d}: {dist}");
                    if d >= k {
                        assert!((dist - sep).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            WorldSpec { width_cells: 15, ..spec64() },
            WorldSpec { num_classes: 1, ..spec64() },
            WorldSpec { blob_scale: 0.5, ..spec64() },
            WorldSpec { feature_dim: 0, ..spec64() },
            WorldSpec { class_weights: Some(vec![1.0; 3]), ..spec64() },
        ] {
            assert!(matches!(generate_world(0, &spec), Err(Error::InvalidWorld(_))));
        }
    }

    #[test]
    fn capture_at_world_center_with_full_side_is_identity() {
        let w = generate_world(2, &spec64()).unwrap();
        let img = capture(&w, Pose::new(32.0, 32.0), 64).unwrap();
        assert_eq!(img.footprint, Footprint { row: 0, col: 0, side: 64 });
        assert_eq!(img.gt, w.labels);
        assert_eq!(img.features, w.features);
    }

    #[test]
    fn capture_origin_uses_floor_center_convention() {
        let w = generate_world(2, &spec64()).unwrap();
        let centre = w.dims.cell_center(10, 10);
        let img = capture(&w, centre, 2).unwrap();
        assert_eq!((img.footprint.row, img.footprint.col), (9, 9));
        // origin = centre - f/2 for every interior cell and odd/even f
        for f in [1usize, 2, 3, 5, 20] {
            let fp = w.dims.footprint(w.dims.cell_center(30, 31), f).unwrap();
            assert_eq!((fp.row, fp.col), (30 - f / 2, 31 - f / 2));
        }
    }

    #[test]
    fn oversized_capture_fails() {
        let w = generate_world(2, &spec64()).unwrap();
        assert!(matches!(
            capture(&w, Pose::new(32.0, 32.0), 65),
            Err(Error::FootprintTooLarge { .. })
        ));
    }

    #[test]
    fn capture_matches_world_exhaustively() {
        let spec = WorldSpec { width_cells: 20, height_cells: 16, ..spec64() };
        let w = generate_world(9, &spec).unwrap();
        for f in [1, 3, 4, 16] {
            for r in 0..w.dims.rows {
                for c in 0..w.dims.cols {
                    let img = capture(&w, w.dims.cell_center(r, c), f).unwrap();
                    let fp = img.footprint;
                    assert_eq!(fp, visible_cells(w.dims.cell_center(r, c), f, &w.dims).unwrap());
                    for i in 0..f {
                        for j in 0..f {
                            assert_eq!(img.gt[i * f + j], w.label(fp.row + i, fp.col + j));
                            assert_eq!(img.pixel_feature(i * f + j), w.feature(fp.row + i, fp.col + j));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn visible_cells_counts_and_disjointness() {
        let dims = GridDims::new(64, 64, 1.0);
        let a = visible_cells(Pose::new(20.0, 20.0), 20, &dims).unwrap();
        assert_eq!(a.cells().count(), 400);
        let b = visible_cells(Pose::new(40.0, 40.0), 20, &dims).unwrap();
        assert!(a.cells().all(|(r, c)| !b.contains(r, c)));
    }

    #[test]
    fn corner_pose_is_clamped_flush() {
        let dims = GridDims::new(64, 48, 1.0);
        let fp = visible_cells(Pose::new(-5.0, 1000.0), 20, &dims).unwrap();
        // x clamped to 10 -> col origin 0; y clamped to 54 -> row origin 44
        assert_eq!(fp, Footprint { row: 44, col: 0, side: 20 });
        assert_eq!(fp.cells().count(), 400);
        assert!(fp.cells().all(|(r, c)| r < 64 && c < 48));
    }
}
