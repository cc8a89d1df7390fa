use proptest::prelude::*;
use std::sync::Arc;
use terra_active::learner::{self, normalized_entropy, LabelSource, LabelledPixel, LearnerConfig, Prediction};
use terra_active::mapping::{recompute, MultiLayerMap, StoredObservation, LOGODDS_LIMIT, P_MIN};
use terra_active::world::{capture, generate_world, Footprint, GridDims, Pose, WorldSpec};

fn prediction_from(rows: &[Vec<f64>]) -> Prediction {
    let k = rows[0].len();
    Prediction {
        num_classes: k,
        probs: rows.iter().flatten().copied().collect(),
        uncertainty: rows.iter().map(|p| normalized_entropy(p)).collect(),
    }
}

/// Sequential Bayes in odds form for one binary class layer.
fn odds_posterior(prior: f64, observations: &[f64]) -> f64 {
    let prior_odds = prior / (1.0 - prior);
    let mut rel = 1.0;
    for &p in observations {
        let p = p.clamp(P_MIN, 1.0 - P_MIN);
        rel *= (p / (1.0 - p)) / prior_odds;
        rel = rel.clamp((-LOGODDS_LIMIT).exp(), LOGODDS_LIMIT.exp());
    }
    let odds = prior_odds * rel;
    odds / (1.0 + odds)
}

fn distribution(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn single_cell_matches_odds_oracle(k in 2usize..7, seq in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 6), 0..50)) {
        let dims = GridDims::new(1, 1, 1.0);
        let mut map = MultiLayerMap::new(dims, k);
        let fp = Footprint { row: 0, col: 0, side: 1 };
        let normalized: Vec<Vec<f64>> = seq.iter().map(|v| {
            let s: f64 = v[..k].iter().sum();
            v[..k].iter().map(|x| x / s).collect()
        }).collect();
        for p in &normalized {
            map.update_semantic(&fp, &prediction_from(std::slice::from_ref(p))).unwrap();
        }
        for c in 0..k {
            let obs: Vec<f64> = normalized.iter().map(|p| p[c]).collect();
            let want = odds_posterior(1.0 / k as f64, &obs);
            prop_assert!((map.layer_probability(0, c) - want).abs() < 1e-9);
        }
        prop_assert_eq!(map.explored[0], !normalized.is_empty());
    }

    #[test]
    fn uncertainty_layer_is_the_arithmetic_mean(values in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let mut map = MultiLayerMap::new(GridDims::new(1, 1, 1.0), 3);
        let fp = Footprint { row: 0, col: 0, side: 1 };
        for v in &values {
            map.update_uncertainty(&fp, &[*v]).unwrap();
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((map.uncertainty_mean[0] - mean).abs() < 1e-12);
        prop_assert_eq!(map.uncertainty_count[0] as usize, values.len());
    }

    #[test]
    fn ml_label_agrees_with_largest_layer(p in distribution(4), n in 1usize..6) {
        let mut map = MultiLayerMap::new(GridDims::new(1, 1, 1.0), 4);
        let fp = Footprint { row: 0, col: 0, side: 1 };
        for _ in 0..n {
            map.update_semantic(&fp, &prediction_from(std::slice::from_ref(&p))).unwrap();
        }
        let label = map.ml_label(0).unwrap();
        let probs: Vec<f64> = (0..4).map(|c| map.layer_probability(0, c)).collect();
        prop_assert!(probs.iter().all(|&q| q <= probs[label]));
        prop_assert!(probs.iter().all(|&q| q > 0.0 && q < 1.0));
    }

    #[test]
    fn updates_commute_per_cell(a in distribution(3), b in distribution(3)) {
        let fp = Footprint { row: 0, col: 0, side: 1 };
        let mut ab = MultiLayerMap::new(GridDims::new(1, 1, 1.0), 3);
        let mut ba = ab.clone();
        for p in [&a, &b] { ab.update_semantic(&fp, &prediction_from(std::slice::from_ref(p))).unwrap(); }
        for p in [&b, &a] { ba.update_semantic(&fp, &prediction_from(std::slice::from_ref(p))).unwrap(); }
        for c in 0..3 {
            prop_assert!((ab.layer_probability(0, c) - ba.layer_probability(0, c)).abs() < 1e-9);
        }
    }
}

fn observations_on(spec: &WorldSpec, poses: &[Pose]) -> (terra_active::SemanticGridWorld, Vec<StoredObservation>) {
    let world = generate_world(5, spec).unwrap();
    let obs = poses
        .iter()
        .enumerate()
        .map(|(i, &pose)| StoredObservation { pose, image: Arc::new(capture(&world, pose, 10).unwrap()), mission_index: i / 2 })
        .collect();
    (world, obs)
}

#[test]
fn recompute_replays_incremental_fusion_and_is_idempotent() {
    let spec = WorldSpec { width_cells: 32, height_cells: 32, ..WorldSpec::default() };
    let poses = [Pose::new(5.0, 5.0), Pose::new(12.0, 7.0), Pose::new(20.0, 20.0), Pose::new(8.0, 9.0)];
    let (world, obs) = observations_on(&spec, &poses);
    let pixels: Vec<LabelledPixel> = (0..32)
        .map(|i| {
            let (r, c) = ((i * 7) % 32, (i * 13) % 32);
            LabelledPixel {
                cell: (r, c),
                feature: world.feature(r, c).to_vec(),
                label: world.label(r, c),
                weight: 1.0,
                source: LabelSource::Seed,
            }
        })
        .collect();
    let model = learner::train(&pixels, 4, &LearnerConfig::default()).unwrap();

    let mut incremental = MultiLayerMap::new(world.dims, 4);
    for o in &obs {
        let pred = model.predict(&o.image.features).unwrap();
        incremental.integrate(&o.image.footprint, &pred).unwrap();
    }
    incremental.increment_counts(&obs[0].image.footprint);

    let once = incremental.recomputed(&obs, &model).unwrap();
    let twice = once.recomputed(&obs, &model).unwrap();
    assert_eq!(once, twice);
    assert_eq!(once, incremental);
    assert_eq!(once.train_counts, incremental.train_counts);

    let fresh = recompute(&[], &model, world.dims, 4).unwrap();
    assert_eq!(fresh, MultiLayerMap::new(world.dims, 4));
}
