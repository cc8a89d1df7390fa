//! Budgeted adaptive informative path planning.
//!
//! The information value of a viewpoint sums, over the cells it sees, the
//! mapped model uncertainty divided by one plus the number of human-labelled
//! footprints that already cover the cell. Unexplored cells count with the
//! constant exploration bonus. Paths are valued with hypothetical counts that
//! accumulate along the sequence, so a path that images the same terrain
//! twice gains less the second time.
//!
//! Every planner returns either an affordable next pose or
//! [`PlanOutcome::End`]; none of them mutates the map.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::MultiLayerMap;
use crate::seed;
use crate::world::{Footprint, GridDims, Pose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Uncertainty assumed for unexplored cells (`c_u`).
    pub exploration_bonus: f64,
    /// Meters per second.
    pub speed: f64,
    /// Seconds spent per image.
    pub measure_time: f64,
    /// Candidate lattice spacing in cells; half the footprint when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_grid_step: Option<usize>,
    /// Poses per optimised sequence.
    pub horizon: usize,
    pub es_offspring: usize,
    pub es_generations: usize,
    pub mcts_iterations: usize,
    pub mcts_uct_constant: f64,
    pub rollout_depth: usize,
    /// Meters moved per local-planner step.
    pub local_step: f64,
    /// Rank frontier candidates by information per second instead of raw information.
    pub frontier_cost_normalized: bool,
    pub rng_seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            exploration_bonus: 1.0,
            speed: 2.0,
            measure_time: 60.0,
            candidate_grid_step: None,
            horizon: 3,
            es_offspring: 16,
            es_generations: 50,
            mcts_iterations: 200,
            mcts_uct_constant: std::f64::consts::SQRT_2,
            rollout_depth: 2,
            local_step: 10.0,
            frontier_cost_normalized: true,
            rng_seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::InvalidConfig { field: format!("planner.{field}"), reason: reason.into() })
        };
        if !(self.exploration_bonus > 0.0) {
            return bad("exploration_bonus", "must be > 0");
        }
        if !(self.speed > 0.0) {
            return bad("speed", "must be > 0");
        }
        if !(self.measure_time >= 0.0) {
            return bad("measure_time", "must be >= 0");
        }
        if self.candidate_grid_step == Some(0) {
            return bad("candidate_grid_step", "must be >= 1");
        }
        if self.horizon == 0 {
            return bad("horizon", "must be >= 1");
        }
        if self.es_offspring == 0 {
            return bad("es_offspring", "must be >= 1");
        }
        if self.mcts_iterations == 0 {
            return bad("mcts_iterations", "must be >= 1");
        }
        if !(self.mcts_uct_constant >= 0.0) {
            return bad("mcts_uct_constant", "must be >= 0");
        }
        if !(self.local_step > 0.0) {
            return bad("local_step", "must be > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetState {
    pub total: f64,
    pub spent: f64,
    pub current: Pose,
}

impl BudgetState {
    pub fn new(total: f64, current: Pose) -> Self {
        Self { total, spent: 0.0, current }
    }

    pub fn remaining(&self) -> f64 {
        self.total - self.spent
    }

    pub fn can_afford(&self, cost: f64) -> bool {
        self.spent + cost <= self.total
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Path {
    pub poses: Vec<Pose>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlanOutcome {
    Move(Pose),
    /// Nothing affordable is left.
    End,
}

/// Seconds to fly from `from` to `to` and take one image.
pub fn travel_cost(from: &Pose, to: &Pose, config: &PlannerConfig) -> f64 {
    from.distance(to) / config.speed + config.measure_time
}

#[inline]
fn cell_score(map: &MultiLayerMap, cell: usize, bonus: f64, extra: u32) -> f64 {
    let u = if map.explored[cell] { map.uncertainty_mean[cell] } else { bonus };
    u / (1.0 + map.train_counts[cell] as f64 + extra as f64)
}

fn footprint_value(map: &MultiLayerMap, fp: &Footprint, bonus: f64, earlier: &[Footprint]) -> f64 {
    let mut total = 0.0;
    for (r, c) in fp.cells() {
        let extra = earlier.iter().filter(|e| e.contains(r, c)).count() as u32;
        total += cell_score(map, map.dims.index(r, c), bonus, extra);
    }
    total
}

/// Information value of one viewpoint.
///
/// `hypothetical_counts`, when given, is a per-cell raster of extra label
/// counts added on top of the map's count layer.
pub fn info_value(
    map: &MultiLayerMap,
    pose: Pose,
    side: usize,
    bonus: f64,
    hypothetical_counts: Option<&[u32]>,
) -> Result<f64> {
    let fp = map.dims.footprint(pose, side)?;
    Ok(match hypothetical_counts {
        None => footprint_value(map, &fp, bonus, &[]),
        Some(h) => fp
            .cells()
            .map(|(r, c)| {
                let cell = map.dims.index(r, c);
                cell_score(map, cell, bonus, h[cell])
            })
            .sum(),
    })
}

/// Value of a pose sequence; each pose sees the counts of the ones before.
pub fn path_value(map: &MultiLayerMap, poses: &[Pose], side: usize, bonus: f64) -> Result<f64> {
    let fps = poses
        .iter()
        .map(|p| map.dims.footprint(*p, side))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..fps.len()).map(|i| footprint_value(map, &fps[i], bonus, &fps[..i])).sum())
}

/// Centre coordinates of footprints tiling `[0, extent)` with the given step,
/// the last one flush with the far border.
fn lattice(extent_cells: usize, side: usize, step: usize, cell_size: f64) -> Vec<f64> {
    let half = side as f64 / 2.0;
    let last = extent_cells as f64 - half;
    let mut out = vec![];
    let mut v = half;
    while v < last - 1e-9 {
        out.push(v * cell_size);
        v += step as f64;
    }
    out.push(last * cell_size);
    out
}

/// Candidate viewpoints on a regular lattice, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl CandidateGrid {
    pub fn new(dims: &GridDims, side: usize, step: usize) -> Self {
        Self {
            xs: lattice(dims.cols, side, step, dims.cell_size),
            ys: lattice(dims.rows, side, step, dims.cell_size),
        }
    }

    pub fn for_config(dims: &GridDims, side: usize, config: &PlannerConfig) -> Self {
        Self::new(dims, side, config.candidate_grid_step.unwrap_or((side / 2).max(1)))
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pose(&self, i: usize) -> Pose {
        Pose::new(self.xs[i % self.xs.len()], self.ys[i / self.xs.len()])
    }

    pub fn poses(&self) -> Vec<Pose> {
        (0..self.len()).map(|i| self.pose(i)).collect()
    }

    /// Lattice pose nearest to `pose`.
    pub fn snap(&self, pose: Pose) -> Pose {
        let nearest = |values: &[f64], v: f64| {
            values
                .iter()
                .copied()
                .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
                .expect("non-empty lattice")
        };
        Pose::new(nearest(&self.xs, pose.x), nearest(&self.ys, pose.y))
    }
}

/// Corner the lawnmower pattern starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    /// Corner closest to `pose`.
    pub fn nearest(dims: &GridDims, pose: Pose) -> Self {
        let right = pose.x > dims.width_m() / 2.0;
        let bottom = pose.y > dims.height_m() / 2.0;
        match (bottom, right) {
            (false, false) => Corner::TopLeft,
            (false, true) => Corner::TopRight,
            (true, false) => Corner::BottomLeft,
            (true, true) => Corner::BottomRight,
        }
    }
}

/// Boustrophedon pattern with rows and columns one footprint apart.
pub fn plan_coverage(dims: &GridDims, side: usize, start: Corner) -> Result<Path> {
    dims.check_side(side)?;
    let mut xs = lattice(dims.cols, side, side, dims.cell_size);
    let mut ys = lattice(dims.rows, side, side, dims.cell_size);
    if matches!(start, Corner::TopRight | Corner::BottomRight) {
        xs.reverse();
    }
    if matches!(start, Corner::BottomLeft | Corner::BottomRight) {
        ys.reverse();
    }
    let mut poses = Vec::with_capacity(xs.len() * ys.len());
    for (i, &y) in ys.iter().enumerate() {
        let row: Box<dyn Iterator<Item = &f64>> =
            if i % 2 == 0 { Box::new(xs.iter()) } else { Box::new(xs.iter().rev()) };
        poses.extend(row.map(|&x| Pose::new(x, y)));
    }
    Ok(Path { poses })
}

/// Unit direction of local sector `s` (0 = +x, counter-clockwise in the
/// x/y frame, 45° apart).
fn sector_direction(s: usize) -> (f64, f64) {
    let a = s as f64 * std::f64::consts::FRAC_PI_4;
    (a.cos(), a.sin())
}

/// Image-based local planner. Returns the outcome and the heading used.
///
/// The current footprint is split into eight angular sectors around its
/// centre; the robot steps `local_step` meters towards the sector with the
/// highest mean cell score. Ties keep the previous heading, otherwise the
/// lowest sector index wins. Sectors whose step is fully blocked by the
/// world border are skipped.
pub fn plan_local(
    map: &MultiLayerMap,
    budget: &BudgetState,
    side: usize,
    config: &PlannerConfig,
    previous_heading: Option<usize>,
) -> Result<(PlanOutcome, Option<usize>)> {
    let dims = map.dims;
    let here = dims.clamp_pose(budget.current, side);
    let fp = dims.footprint(here, side)?;
    let mut sum = [0.0; 8];
    let mut count = [0usize; 8];
    for (r, c) in fp.cells() {
        let centre = dims.cell_center(r, c);
        let (dx, dy) = (centre.x - here.x, centre.y - here.y);
        if dx.abs() < 1e-12 && dy.abs() < 1e-12 {
            continue;
        }
        let s = ((dy.atan2(dx) / std::f64::consts::FRAC_PI_4).round() as i64).rem_euclid(8) as usize;
        sum[s] += cell_score(map, dims.index(r, c), config.exploration_bonus, 0);
        count[s] += 1;
    }

    let mut options: Vec<(usize, f64, Pose)> = vec![];
    for s in 0..8 {
        if count[s] == 0 {
            continue;
        }
        let (ux, uy) = sector_direction(s);
        let target = dims.clamp_pose(
            Pose::new(here.x + config.local_step * ux, here.y + config.local_step * uy),
            side,
        );
        if target.distance(&here) < 1e-9 || !budget.can_afford(travel_cost(&budget.current, &target, config)) {
            continue;
        }
        options.push((s, sum[s] / count[s] as f64, target));
    }
    let Some(best) = options.iter().map(|o| o.1).reduce(f64::max) else {
        return Ok((PlanOutcome::End, previous_heading));
    };
    let tied: Vec<&(usize, f64, Pose)> = options.iter().filter(|o| best - o.1 <= 1e-12 * best.abs().max(1.0)).collect();
    let chosen = previous_heading
        .and_then(|h| tied.iter().find(|o| o.0 == h))
        .unwrap_or(&tied[0]);
    Ok((PlanOutcome::Move(chosen.2), Some(chosen.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontierCluster {
    /// `(row, col)` in scan order.
    pub cells: Vec<(usize, usize)>,
    /// Clamped centroid pose.
    pub centroid: Pose,
}

/// Explored cells 4-adjacent to unexplored ones, grouped into 8-connected
/// clusters in row-major discovery order.
pub fn detect_frontiers(map: &MultiLayerMap, side: usize) -> Vec<FrontierCluster> {
    let dims = map.dims;
    let (rows, cols) = (dims.rows, dims.cols);
    let is_frontier = |r: usize, c: usize| {
        if !map.explored[dims.index(r, c)] {
            return false;
        }
        let unexplored = |rr: usize, cc: usize| !map.explored[dims.index(rr, cc)];
        (r > 0 && unexplored(r - 1, c))
            || (r + 1 < rows && unexplored(r + 1, c))
            || (c > 0 && unexplored(r, c - 1))
            || (c + 1 < cols && unexplored(r, c + 1))
    };
    let frontier: Vec<bool> = (0..dims.len()).map(|i| is_frontier(i / cols, i % cols)).collect();
    let mut seen = vec![false; dims.len()];
    let mut clusters = vec![];
    for start in 0..dims.len() {
        if !frontier[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut cells = vec![];
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / cols, i % cols);
            cells.push((r, c));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                        continue;
                    }
                    let j = nr as usize * cols + nc as usize;
                    if frontier[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        let n = cells.len() as f64;
        let (sx, sy) = cells.iter().fold((0.0, 0.0), |(sx, sy), &(r, c)| {
            let p = dims.cell_center(r, c);
            (sx + p.x, sy + p.y)
        });
        let centroid = dims.clamp_pose(Pose::new(sx / n, sy / n), side);
        clusters.push(FrontierCluster { cells, centroid });
    }
    clusters
}

/// Viewpoints generated by the frontier clusters: each cluster's centroid
/// followed by its cells snapped to the candidate lattice, deduplicated in
/// order of first appearance.
pub fn frontier_candidates(dims: &GridDims, clusters: &[FrontierCluster], grid: &CandidateGrid) -> Vec<Pose> {
    let mut out: Vec<Pose> = vec![];
    for cluster in clusters {
        let snapped = cluster.cells.iter().map(|&(r, c)| grid.snap(dims.cell_center(r, c)));
        for p in std::iter::once(cluster.centroid).chain(snapped) {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

/// First index of the maximum; `None` for an empty slice.
fn argmax_first(values: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(i, v) in values {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0)
}

/// Global frontier planner.
pub fn plan_frontier(
    map: &MultiLayerMap,
    budget: &BudgetState,
    side: usize,
    config: &PlannerConfig,
) -> Result<PlanOutcome> {
    let grid = CandidateGrid::for_config(&map.dims, side, config);
    let clusters = detect_frontiers(map, side);
    let candidates = frontier_candidates(&map.dims, &clusters, &grid);

    let mut scored = vec![];
    for (i, pose) in candidates.iter().enumerate() {
        let cost = travel_cost(&budget.current, pose, config);
        if !budget.can_afford(cost) {
            continue;
        }
        let info = info_value(map, *pose, side, config.exploration_bonus, None)?;
        let utility = if config.frontier_cost_normalized { info / cost.max(f64::MIN_POSITIVE) } else { info };
        scored.push((i, utility));
    }
    if let Some(i) = argmax_first(&scored) {
        return Ok(PlanOutcome::Move(candidates[i]));
    }
    greedy_grid_choice(map, budget, side, config, &grid)
}

fn greedy_grid_choice(
    map: &MultiLayerMap,
    budget: &BudgetState,
    side: usize,
    config: &PlannerConfig,
    grid: &CandidateGrid,
) -> Result<PlanOutcome> {
    let mut scored = vec![];
    for i in 0..grid.len() {
        let pose = grid.pose(i);
        if budget.can_afford(travel_cost(&budget.current, &pose, config)) {
            scored.push((i, info_value(map, pose, side, config.exploration_bonus, None)?));
        }
    }
    Ok(argmax_first(&scored).map_or(PlanOutcome::End, |i| PlanOutcome::Move(grid.pose(i))))
}

/// Per-call generator: a pure function of the config seed and the budget state.
fn planner_rng(config: &PlannerConfig, stream: &str, budget: &BudgetState) -> ChaCha8Rng {
    let salt = budget.spent.to_bits() ^ budget.current.x.to_bits().rotate_left(21) ^ budget.current.y.to_bits().rotate_left(42);
    seed::rng(config.rng_seed, stream, salt)
}

/// Drops poses from the first one whose cumulative cost exceeds `remaining`.
fn truncate_affordable(start: Pose, poses: &mut Vec<Pose>, remaining: f64, config: &PlannerConfig) {
    let mut at = start;
    let mut spent = 0.0;
    for (i, p) in poses.iter().enumerate() {
        spent += travel_cost(&at, p, config);
        if spent > remaining {
            poses.truncate(i);
            return;
        }
        at = *p;
    }
}

/// Greedy sequential argmax over the lattice, used to seed the evolution strategy.
pub fn greedy_sequence(
    map: &MultiLayerMap,
    budget: &BudgetState,
    side: usize,
    config: &PlannerConfig,
    grid: &CandidateGrid,
) -> Result<Vec<Pose>> {
    let fps: Vec<Footprint> = grid
        .poses()
        .iter()
        .map(|p| map.dims.footprint(*p, side))
        .collect::<Result<_>>()?;
    let mut chosen: Vec<Footprint> = vec![];
    let mut seq = vec![];
    let mut at = budget.current;
    let mut remaining = budget.remaining();
    for _ in 0..config.horizon {
        let mut scored = vec![];
        for (i, fp) in fps.iter().enumerate() {
            if travel_cost(&at, &grid.pose(i), config) <= remaining {
                scored.push((i, footprint_value(map, fp, config.exploration_bonus, &chosen)));
            }
        }
        let Some(i) = argmax_first(&scored) else { break };
        let pose = grid.pose(i);
        remaining -= travel_cost(&at, &pose, config);
        at = pose;
        chosen.push(fps[i]);
        seq.push(pose);
    }
    Ok(seq)
}

/// Receding-horizon (1+λ) evolution strategy over pose sequences.
///
/// Starts from the greedy lattice sequence; each generation perturbs every
/// pose of the parent with isotropic Gaussian noise, clamps to the world and
/// truncates sequences that overrun the remaining budget. The best child
/// replaces the parent only on strict improvement; otherwise the step size
/// halves. Returns the first pose of the best sequence.
pub fn plan_optimization(
    map: &MultiLayerMap,
    budget: &BudgetState,
    side: usize,
    config: &PlannerConfig,
) -> Result<PlanOutcome> {
    let (parent, _) = optimize_sequence(map, budget, side, config)?;
    Ok(parent.first().map_or(PlanOutcome::End, |p| PlanOutcome::Move(*p)))
}

/// The evolved sequence and its path value.
pub fn optimize_sequence(
    map: &MultiLayerMap,
    budget: &BudgetState,
    side: usize,
    config: &PlannerConfig,
) -> Result<(Vec<Pose>, f64)> {
    let dims = map.dims;
    let grid = CandidateGrid::for_config(&dims, side, config);
    let mut parent = greedy_sequence(map, budget, side, config, &grid)?;
    if parent.is_empty() {
        return Ok((parent, 0.0));
    }
    let bonus = config.exploration_bonus;
    let mut fitness = path_value(map, &parent, side, bonus)?;
    let mut sigma = side as f64 * dims.cell_size;
    let mut rng = planner_rng(config, "optimization", budget);
    for _ in 0..config.es_generations {
        let noise = Normal::new(0.0, sigma).expect("positive sigma");
        let mut best: Option<(Vec<Pose>, f64)> = None;
        for _ in 0..config.es_offspring {
            let mut child: Vec<Pose> = parent
                .iter()
                .map(|p| {
                    let moved = Pose::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng));
                    dims.clamp_pose(moved, side)
                })
                .collect();
            truncate_affordable(budget.current, &mut child, budget.remaining(), config);
            if child.is_empty() {
                continue;
            }
            let f = path_value(map, &child, side, bonus)?;
            if best.as_ref().is_none_or(|b| f > b.1) {
                best = Some((child, f));
            }
        }
        match best {
            Some((child, f)) if f > fitness => {
                parent = child;
                fitness = f;
            }
            _ => sigma /= 2.0,
        }
    }
    Ok((parent, fitness))
}

struct Node {
    pose: Pose,
    depth: usize,
    remaining: f64,
    children: Vec<usize>,
    unexpanded: VecDeque<usize>,
    visits: u32,
    total: f64,
}

/// Monte Carlo tree search over the candidate lattice.
///
/// Simulated paths hold `1 + rollout_depth` poses: the tree part followed
/// by uniformly random affordable candidates. Rewards are path values
/// divided by `c_u · f² · (1 + rollout_depth)`.
pub fn plan_sampling(
    map: &MultiLayerMap,
    budget: &BudgetState,
    side: usize,
    config: &PlannerConfig,
) -> Result<PlanOutcome> {
    let grid = CandidateGrid::for_config(&map.dims, side, config);
    let poses = grid.poses();
    let depth_limit = 1 + config.rollout_depth;
    let normalizer = config.exploration_bonus * (side * side) as f64 * depth_limit as f64;
    let affordable = |from: &Pose, remaining: f64| -> VecDeque<usize> {
        (0..poses.len()).filter(|&i| travel_cost(from, &poses[i], config) <= remaining).collect()
    };

    let mut nodes = vec![Node {
        pose: budget.current,
        depth: 0,
        remaining: budget.remaining(),
        children: vec![],
        unexpanded: affordable(&budget.current, budget.remaining()),
        visits: 0,
        total: 0.0,
    }];
    if nodes[0].unexpanded.is_empty() {
        return Ok(PlanOutcome::End);
    }
    // Child candidate index for each node, parallel to `nodes`.
    let mut candidate_of = vec![usize::MAX];
    let mut rng = planner_rng(config, "sampling", budget);

    for _ in 0..config.mcts_iterations {
        let mut trail = vec![0usize];
        let mut node = 0;
        // Selection.
        while nodes[node].unexpanded.is_empty() && !nodes[node].children.is_empty() && nodes[node].depth < depth_limit {
            let parent_visits = nodes[node].visits.max(1) as f64;
            let mut best: Option<(usize, f64)> = None;
            for &child in &nodes[node].children {
                let ch = &nodes[child];
                let score = if ch.visits == 0 {
                    f64::INFINITY
                } else {
                    ch.total / ch.visits as f64
                        + config.mcts_uct_constant * normalizer * (parent_visits.ln() / ch.visits as f64).sqrt()
                };
                if best.is_none_or(|b| score > b.1) {
                    best = Some((child, score));
                }
            }
            node = best.expect("children present").0;
            trail.push(node);
        }
        // Expansion.
        if nodes[node].depth < depth_limit {
            if let Some(c) = nodes[node].unexpanded.pop_front() {
                let from = nodes[node].pose;
                let remaining = nodes[node].remaining - travel_cost(&from, &poses[c], config);
                let depth = nodes[node].depth + 1;
                let unexpanded = if depth < depth_limit { affordable(&poses[c], remaining) } else { VecDeque::new() };
                nodes.push(Node {
                    pose: poses[c],
                    depth,
                    remaining,
                    children: vec![],
                    unexpanded,
                    visits: 0,
                    total: 0.0,
                });
                candidate_of.push(c);
                let id = nodes.len() - 1;
                nodes[node].children.push(id);
                node = id;
                trail.push(node);
            }
        }
        // Rollout.
        let mut path: Vec<Pose> = trail[1..].iter().map(|&n| nodes[n].pose).collect();
        let mut at = nodes[node].pose;
        let mut remaining = nodes[node].remaining;
        while path.len() < depth_limit {
            let options = affordable(&at, remaining);
            if options.is_empty() {
                break;
            }
            let pick = options[rng.random_range(0..options.len())];
            remaining -= travel_cost(&at, &poses[pick], config);
            at = poses[pick];
            path.push(at);
        }
        let reward = path_value(map, &path, side, config.exploration_bonus)?;
        // Backup.
        for &n in &trail {
            nodes[n].visits += 1;
            nodes[n].total += reward;
        }
    }

    let root = &nodes[0];
    let mut best: Option<usize> = None;
    for &child in &root.children {
        let better = match best {
            None => true,
            Some(b) => {
                let (c, o) = (&nodes[child], &nodes[b]);
                let (mc, mo) = (c.total / c.visits.max(1) as f64, o.total / o.visits.max(1) as f64);
                c.visits > o.visits || (c.visits == o.visits && mc > mo)
            }
        };
        if better {
            best = Some(child);
        }
    }
    Ok(best.map_or(PlanOutcome::End, |b| PlanOutcome::Move(nodes[b].pose)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(rows: usize, cols: usize) -> GridDims {
        GridDims::new(rows, cols, 1.0)
    }

    fn explore(map: &mut MultiLayerMap, fp: &Footprint, u: f64) {
        for (r, c) in fp.cells() {
            let i = map.dims.index(r, c);
            map.explored[i] = true;
            map.uncertainty_mean[i] = u;
            map.uncertainty_count[i] = 1;
        }
    }

    #[test]
    fn unexplored_footprint_is_worth_the_bonus() {
        let map = MultiLayerMap::new(dims(64, 64), 4);
        let v = info_value(&map, Pose::new(32.0, 32.0), 20, 1.0, None).unwrap();
        assert_eq!(v, 400.0);
    }

    #[test]
    fn certain_terrain_is_worthless() {
        let mut map = MultiLayerMap::new(dims(64, 64), 4);
        explore(&mut map, &Footprint { row: 0, col: 0, side: 64 }, 0.0);
        assert_eq!(info_value(&map, Pose::new(32.0, 32.0), 20, 1.0, None).unwrap(), 0.0);
    }

    #[test]
    fn two_labelled_cells_formula() {
        let mut map = MultiLayerMap::new(dims(32, 32), 4);
        explore(&mut map, &Footprint { row: 0, col: 0, side: 32 }, 0.0);
        for cell in [map.dims.index(10, 10), map.dims.index(12, 15)] {
            map.uncertainty_mean[cell] = 0.5;
            map.train_counts[cell] = 1;
        }
        let v = info_value(&map, Pose::new(16.0, 16.0), 20, 1.0, None).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hypothetical_counts_match_path_accumulation() {
        let mut map = MultiLayerMap::new(dims(40, 40), 3);
        explore(&mut map, &Footprint { row: 0, col: 0, side: 20 }, 0.6);
        let a = Pose::new(10.0, 10.0);
        let b = Pose::new(18.0, 14.0);
        let fa = map.dims.footprint(a, 20).unwrap();
        let mut h = vec![0u32; map.dims.len()];
        fa.cells().for_each(|(r, c)| h[r * 40 + c] += 1);
        let expected = info_value(&map, a, 20, 1.0, None).unwrap() + info_value(&map, b, 20, 1.0, Some(&h)).unwrap();
        let got = path_value(&map, &[a, b], 20, 1.0).unwrap();
        assert!((expected - got).abs() < 1e-9);
        assert!(got < info_value(&map, a, 20, 1.0, None).unwrap() + info_value(&map, b, 20, 1.0, None).unwrap());
    }

    #[test]
    fn travel_cost_model() {
        let cfg = PlannerConfig { speed: 2.0, measure_time: 1.0, ..PlannerConfig::default() };
        let a = Pose::new(3.0, 4.0);
        assert_eq!(travel_cost(&a, &a, &cfg), 1.0);
        assert_eq!(travel_cost(&Pose::new(0.0, 0.0), &Pose::new(30.0, 0.0), &cfg), 16.0);
        let (p, q, r) = (Pose::new(0.0, 0.0), Pose::new(6.0, 8.0), Pose::new(12.0, 16.0));
        let direct = travel_cost(&p, &r, &cfg);
        let via = travel_cost(&p, &q, &cfg) + travel_cost(&q, &r, &cfg) - cfg.measure_time;
        assert!((direct - via).abs() < 1e-12);
    }

    #[test]
    fn coverage_geometry() {
        let path = plan_coverage(&dims(20, 40), 20, Corner::TopLeft).unwrap();
        assert_eq!(path.poses, vec![Pose::new(10.0, 10.0), Pose::new(30.0, 10.0)]);
        let single = plan_coverage(&dims(20, 20), 20, Corner::BottomRight).unwrap();
        assert_eq!(single.poses, vec![Pose::new(10.0, 10.0)]);
        let serp = plan_coverage(&dims(40, 40), 20, Corner::TopRight).unwrap();
        assert_eq!(
            serp.poses,
            vec![Pose::new(30.0, 10.0), Pose::new(10.0, 10.0), Pose::new(10.0, 30.0), Pose::new(30.0, 30.0)]
        );
    }

    #[test]
    fn coverage_visits_every_cell() {
        for (rows, cols, side) in [(128, 128, 20), (50, 33, 7), (16, 16, 16), (45, 90, 11)] {
            let d = dims(rows, cols);
            for corner in [Corner::TopLeft, Corner::TopRight, Corner::BottomLeft, Corner::BottomRight] {
                let path = plan_coverage(&d, side, corner).unwrap();
                let mut seen = vec![false; d.len()];
                for p in &path.poses {
                    d.footprint(*p, side).unwrap().cells().for_each(|(r, c)| seen[d.index(r, c)] = true);
                }
                assert!(seen.iter().all(|&s| s), "{rows}x{cols} f={side} {corner:?}");
            }
        }
    }

    #[test]
    fn local_moves_towards_uncertainty() {
        let mut map = MultiLayerMap::new(dims(64, 64), 4);
        explore(&mut map, &Footprint { row: 0, col: 0, side: 64 }, 0.1);
        explore(&mut map, &Footprint { row: 27, col: 34, side: 10 }, 0.9);
        let budget = BudgetState::new(1e6, Pose::new(32.0, 32.0));
        let cfg = PlannerConfig::default();
        let (out, heading) = plan_local(&map, &budget, 20, &cfg, None).unwrap();
        let PlanOutcome::Move(p) = out else { panic!("expected a move") };
        assert!(p.x > 32.0, "{p:?}");
        assert_eq!(heading, Some(0));
    }

    #[test]
    fn local_tie_keeps_heading() {
        let map = MultiLayerMap::new(dims(64, 64), 4);
        let budget = BudgetState::new(1e6, Pose::new(32.0, 32.0));
        let cfg = PlannerConfig::default();
        let (_, h) = plan_local(&map, &budget, 20, &cfg, Some(5)).unwrap();
        assert_eq!(h, Some(5));
        let (_, h) = plan_local(&map, &budget, 20, &cfg, None).unwrap();
        assert_eq!(h, Some(0));
    }

    #[test]
    fn local_is_clamped_at_border() {
        let mut map = MultiLayerMap::new(dims(64, 64), 4);
        explore(&mut map, &Footprint { row: 0, col: 0, side: 64 }, 0.1);
        explore(&mut map, &Footprint { row: 27, col: 54, side: 10 }, 0.9);
        let start = Pose::new(50.0, 32.0);
        let budget = BudgetState::new(1e6, start);
        let (out, h) = plan_local(&map, &budget, 20, &PlannerConfig::default(), None).unwrap();
        assert_eq!(h, Some(0));
        assert_eq!(out, PlanOutcome::Move(Pose::new(54.0, 32.0)));
    }

    #[test]
    fn frontier_detection() {
        let mut map = MultiLayerMap::new(dims(40, 40), 2);
        assert!(detect_frontiers(&map, 10).is_empty());
        let fp = Footprint { row: 10, col: 12, side: 10 };
        explore(&mut map, &fp, 0.5);
        let clusters = detect_frontiers(&map, 10);
        assert_eq!(clusters.len(), 1);
        let mut ring: Vec<(usize, usize)> = fp
            .cells()
            .filter(|&(r, c)| r == 10 || r == 19 || c == 12 || c == 21)
            .collect();
        let mut got = clusters[0].cells.clone();
        ring.sort_unstable();
        got.sort_unstable();
        assert_eq!(got, ring);
        assert_eq!(clusters[0].centroid, Pose::new(17.0, 15.0));
        explore(&mut map, &Footprint { row: 0, col: 0, side: 40 }, 0.5);
        assert!(detect_frontiers(&map, 10).is_empty());
    }

    #[test]
    fn frontier_prefers_the_closer_of_equal_frontiers() {
        // Two explored islands far apart; the robot sits next to one.
        let mut map = MultiLayerMap::new(dims(20, 100), 2);
        explore(&mut map, &Footprint { row: 5, col: 10, side: 10 }, 0.0);
        explore(&mut map, &Footprint { row: 5, col: 80, side: 10 }, 0.0);
        let cfg = PlannerConfig::default();
        let budget = BudgetState::new(1e6, Pose::new(15.0, 10.0));
        let PlanOutcome::Move(p) = plan_frontier(&map, &budget, 10, &cfg).unwrap() else { panic!() };
        assert!(p.x < 50.0, "{p:?}");
        let budget = BudgetState::new(1e6, Pose::new(85.0, 10.0));
        let PlanOutcome::Move(p) = plan_frontier(&map, &budget, 10, &cfg).unwrap() else { panic!() };
        assert!(p.x > 50.0, "{p:?}");
    }

    #[test]
    fn frontier_ends_when_nothing_is_affordable() {
        let map = MultiLayerMap::new(dims(40, 40), 2);
        let cfg = PlannerConfig { measure_time: 5.0, ..PlannerConfig::default() };
        let mut budget = BudgetState::new(10.0, Pose::new(20.0, 20.0));
        budget.spent = 6.0;
        assert_eq!(plan_frontier(&map, &budget, 10, &cfg).unwrap(), PlanOutcome::End);
        assert_eq!(plan_optimization(&map, &budget, 10, &cfg).unwrap(), PlanOutcome::End);
        assert_eq!(plan_sampling(&map, &budget, 10, &cfg).unwrap(), PlanOutcome::End);
    }

    #[test]
    fn optimization_starts_from_greedy_and_is_deterministic() {
        let mut map = MultiLayerMap::new(dims(64, 64), 3);
        explore(&mut map, &Footprint { row: 0, col: 0, side: 40 }, 0.3);
        let budget = BudgetState::new(2000.0, Pose::new(10.0, 10.0));
        let cfg = PlannerConfig { horizon: 1, ..PlannerConfig::default() };
        let grid = CandidateGrid::for_config(&map.dims, 20, &cfg);
        let greedy = greedy_sequence(&map, &budget, 20, &cfg, &grid).unwrap();
        let (best, value) = optimize_sequence(&map, &budget, 20, &cfg).unwrap();
        assert!(value >= path_value(&map, &greedy, 20, 1.0).unwrap());
        assert_eq!(optimize_sequence(&map, &budget, 20, &cfg).unwrap().0, best);

        let mut flat = MultiLayerMap::new(dims(64, 64), 3);
        explore(&mut flat, &Footprint { row: 0, col: 0, side: 64 }, 0.0);
        let cfg3 = PlannerConfig::default();
        let first = greedy_sequence(&flat, &budget, 20, &cfg3, &grid).unwrap()[0];
        assert_eq!(plan_optimization(&flat, &budget, 20, &cfg3).unwrap(), PlanOutcome::Move(first));
    }

    #[test]
    fn degenerate_mcts_is_greedy() {
        let mut map = MultiLayerMap::new(dims(48, 48), 3);
        explore(&mut map, &Footprint { row: 0, col: 0, side: 30 }, 0.4);
        let cfg = PlannerConfig { mcts_uct_constant: 0.0, rollout_depth: 0, mcts_iterations: 200, ..PlannerConfig::default() };
        let budget = BudgetState::new(1e5, Pose::new(10.0, 10.0));
        let grid = CandidateGrid::for_config(&map.dims, 16, &cfg);
        let expected = greedy_grid_choice(&map, &budget, 16, &cfg, &grid).unwrap();
        assert_eq!(plan_sampling(&map, &budget, 16, &cfg).unwrap(), expected);
    }

    #[test]
    fn equal_rewards_pick_the_first_candidate() {
        let map = MultiLayerMap::new(dims(40, 40), 2);
        let cfg = PlannerConfig { mcts_uct_constant: 0.0, rollout_depth: 0, mcts_iterations: 50, ..PlannerConfig::default() };
        let budget = BudgetState::new(1e5, Pose::new(20.0, 20.0));
        let grid = CandidateGrid::for_config(&map.dims, 10, &cfg);
        assert_eq!(plan_sampling(&map, &budget, 10, &cfg).unwrap(), PlanOutcome::Move(grid.pose(0)));
    }
}
