//! Seeded synthetic data and population generation.
//!
//! Features are split into a strategy block and a context block; each node's
//! context block is shifted by a per-node mean drawn from a ball of radius
//! `context_shift`, which produces feature-skew non-IID partitions. Targets
//! are a squashed linear map with one pairwise interaction plus noise,
//! clamped to [0,1].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::DataSpec;
use super::SimError;
use crate::fl::LocalDataset;
use crate::intent::{ActionItem, Goal, RelationalOp, StrategyTuple, TimeWindow};
use crate::rng::{stream, stream3, tags};
use crate::scalar::Scalar;
use crate::similarity::{LatencyClass, NodeProfile};

/// Action-kind vocabulary for generated strategy histories.
pub const ACTION_VOCAB: [&str; 8] = [
    "qos_adjustment",
    "bandwidth_allocation",
    "priority_boost",
    "load_balancing",
    "traffic_shaping",
    "power_capping",
    "route_update",
    "sampling_rate",
];

/// Canonical goal templates: metric, operator, and base threshold.
pub const GOAL_VOCAB: [(&str, RelationalOp, f64); 8] = [
    ("latency", RelationalOp::Lt, 15.0),
    ("loss", RelationalOp::Lt, 1.0),
    ("throughput", RelationalOp::Geq, 100.0),
    ("jitter", RelationalOp::Lt, 5.0),
    ("energy", RelationalOp::Lt, 50.0),
    ("cpu_load", RelationalOp::Lt, 0.8),
    ("uptime", RelationalOp::Geq, 99.0),
    ("bandwidth", RelationalOp::Geq, 50.0),
];

const ENTITY_VOCAB: [&str; 4] = [
    "ultrasonic_module",
    "conveyor_a",
    "pump_station",
    "assembly_cell",
];

/// The ground-truth generator: fixed once per seed and recorded alongside
/// the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTruth {
    /// Linear coefficients over all features.
    pub weights: Vec<f64>,
    /// Coefficient of the pairwise interaction term.
    pub interaction_coeff: f64,
    /// Feature indices of the interaction term.
    pub interaction: (usize, usize),
    /// Per-node context-mean offsets.
    pub node_means: Vec<Vec<f64>>,
    /// Width of the context block (the last `context_dim` features).
    pub context_dim: usize,
    pub noise_sd: f64,
}

/// Partitions, held-out test set, and the generator record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DatasetBundle<T: Scalar> {
    pub partitions: Vec<LocalDataset<T>>,
    pub test: LocalDataset<T>,
    pub truth: GeneratorTruth,
}

/// Feature standard deviation. Telemetry-style features are kept at modest
/// scale, which also bounds the MSE curvature Lipschitz constant the local
/// steps see.
const FEATURE_SCALE: f64 = 0.5;
/// Target standard deviation of the pre-squash score `z`.
const SIGNAL_SCALE: f64 = 1.2;
/// Standard deviation of the interaction contribution to `z`.
const INTERACTION_SCALE: f64 = 0.35;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Point uniform in the ball of the given radius.
fn uniform_ball(rng: &mut impl Rng, dim: usize, radius: f64) -> Vec<f64> {
    if radius == 0.0 {
        return vec![0.0; dim];
    }
    let dir: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    dir.into_iter().map(|x| x * r / norm).collect()
}

/// Generate per-node partitions and a pooled (unshifted) test set.
pub fn generate_dataset<T: Scalar>(spec: &DataSpec) -> Result<DatasetBundle<T>, SimError> {
    spec.validate()?;
    let d = spec.input_dim;
    let context_dim = d / 2;
    let strategy_dim = d - context_dim;

    let mut truth_rng = stream(spec.seed, tags::DATA_TRUTH);
    // Directions are seeded; magnitudes are normalized so every seed's task
    // carries the same signal and nonlinearity budget.
    let raw: Vec<f64> = (0..d).map(|_| normal(&mut truth_rng)).collect();
    let raw_norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    let scale = SIGNAL_SCALE / (FEATURE_SCALE * raw_norm);
    let weights: Vec<f64> = raw.iter().map(|x| x * scale).collect();
    let sign = if normal(&mut truth_rng) >= 0.0 { 1.0 } else { -1.0 };
    let interaction_coeff = sign * INTERACTION_SCALE / (FEATURE_SCALE * FEATURE_SCALE);
    let interaction = (0, 1);

    let sample_row = |rng: &mut rand_chacha::ChaCha8Rng, mean: &[f64]| -> (Vec<T>, T) {
        let mut x = vec![0.0f64; d];
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = normal(rng);
            if j >= strategy_dim {
                *xj += mean[j - strategy_dim];
            }
            *xj *= FEATURE_SCALE;
        }
        // Store features at T precision; the target is computed from the
        // stored values so the pair stays consistent at any precision.
        let stored: Vec<T> = x.iter().map(|&v| T::from_f64_lossy(v)).collect();
        let xf: Vec<f64> = stored.iter().map(|v| v.to_f64_lossy()).collect();
        let mut z = 0.0;
        for j in 0..d {
            z += weights[j] * xf[j];
        }
        z += interaction_coeff * xf[interaction.0] * xf[interaction.1];
        let noise = spec.noise_sd * normal(rng);
        let y = (sigmoid(z) + noise).clamp(0.0, 1.0);
        (stored, T::from_f64_lossy(y))
    };

    let mut node_means = Vec::with_capacity(spec.n_nodes);
    let mut partitions = Vec::with_capacity(spec.n_nodes);
    let [lo, hi] = spec.samples_per_node;
    // Nodes with relevant prior experience operate near the strategy's
    // intended context; the rest spread across the full ball.
    let anchored = anchored_half(spec.n_nodes, spec.seed);
    for node in 0..spec.n_nodes {
        let mut rng = stream3(spec.seed, tags::DATA_NODE, node as u64);
        let radius = if anchored.binary_search(&node).is_ok() {
            0.35 * spec.context_shift
        } else {
            spec.context_shift
        };
        let mean = uniform_ball(&mut rng, context_dim, radius);
        let n = if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        };
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, y) = sample_row(&mut rng, &mean);
            inputs.push(x);
            targets.push(y);
        }
        // Record the mean in feature units (post scaling).
        node_means.push(mean.iter().map(|v| v * FEATURE_SCALE).collect());
        partitions.push(
            LocalDataset::new(inputs, targets).map_err(|e| SimError::BadSpec(e.to_string()))?,
        );
    }

    let mut test_rng = stream(spec.seed, tags::DATA_TEST);
    let zero_mean = vec![0.0f64; context_dim];
    let mut inputs = Vec::with_capacity(spec.test_samples);
    let mut targets = Vec::with_capacity(spec.test_samples);
    for _ in 0..spec.test_samples {
        let (x, y) = sample_row(&mut test_rng, &zero_mean);
        inputs.push(x);
        targets.push(y);
    }
    let test = LocalDataset::new(inputs, targets).map_err(|e| SimError::BadSpec(e.to_string()))?;

    Ok(DatasetBundle {
        partitions,
        test,
        truth: GeneratorTruth {
            weights,
            interaction_coeff,
            interaction,
            node_means,
            context_dim,
            noise_sd: spec.noise_sd,
        },
    })
}

/// Build a seeded pool of historical strategies and deal 1..=5 of them to
/// each node, together with resource levels and a round-robin latency class.
pub fn generate_population<T: Scalar>(
    spec: &DataSpec,
    strategy_pool_size: usize,
    seed: u64,
) -> Vec<NodeProfile<T>> {
    assert!(strategy_pool_size >= 1, "pool must hold at least one strategy");
    let mut pool_rng = stream(seed, tags::POPULATION);
    // The pool is tiered by relevance to the anchor operations (the first
    // two action kinds and goal metrics): slot 0 is a near-repeat of an
    // anchor deployment, slots 1-2 are related operations, and the rest are
    // unrelated. Histories drawn from this pool give node similarities that
    // spread over distinct levels instead of clustering at one value.
    let pool: Vec<StrategyTuple<T>> = (0..strategy_pool_size)
        .map(|i| {
            let (actions, goals): (Vec<ActionItem<T>>, Vec<Goal<T>>) = if i == 0 {
                // Near-repeat: both anchor actions, both anchor goals with
                // tight threshold perturbation.
                let actions = vec![
                    ActionItem::new(ACTION_VOCAB[0]),
                    ActionItem::new(ACTION_VOCAB[1]),
                ];
                let goals = (0..2)
                    .map(|g| {
                        let (name, op, base) = GOAL_VOCAB[g];
                        let perturb = pool_rng.random_range(0.9..1.1);
                        Goal::new(name, op, T::from_f64_lossy(base * perturb))
                    })
                    .collect();
                (actions, goals)
            } else if i <= 2 {
                // Related: one anchor action plus one other, one anchor goal
                // with a looser threshold plus one unrelated goal.
                let other = pool_rng.random_range(2..ACTION_VOCAB.len());
                let actions = vec![
                    ActionItem::new(ACTION_VOCAB[i - 1]),
                    ActionItem::new(ACTION_VOCAB[other]),
                ];
                let (name, op, base) = GOAL_VOCAB[i - 1];
                let perturb = pool_rng.random_range(0.8..1.3);
                let extra = pool_rng.random_range(2..GOAL_VOCAB.len());
                let (xname, xop, xbase) = GOAL_VOCAB[extra];
                let goals = vec![
                    Goal::new(name, op, T::from_f64_lossy(base * perturb)),
                    Goal::new(
                        xname,
                        xop,
                        T::from_f64_lossy(xbase * pool_rng.random_range(0.8..1.3)),
                    ),
                ];
                (actions, goals)
            } else {
                // Unrelated: non-anchor actions and goals only.
                let n_actions = pool_rng.random_range(1..=3usize);
                let mut kinds: Vec<usize> = (2..ACTION_VOCAB.len()).collect();
                partial_shuffle(&mut kinds, n_actions, &mut pool_rng);
                let mut picked = kinds[..n_actions].to_vec();
                picked.sort_unstable();
                let actions = picked
                    .iter()
                    .map(|&k| ActionItem::new(ACTION_VOCAB[k]))
                    .collect();
                let n_goals = pool_rng.random_range(1..=3usize);
                let mut metrics: Vec<usize> = (2..GOAL_VOCAB.len()).collect();
                partial_shuffle(&mut metrics, n_goals, &mut pool_rng);
                let mut chosen = metrics[..n_goals].to_vec();
                chosen.sort_unstable();
                let goals = chosen
                    .iter()
                    .map(|&g| {
                        let (name, op, base) = GOAL_VOCAB[g];
                        let perturb = pool_rng.random_range(0.7..1.4);
                        Goal::new(name, op, T::from_f64_lossy(base * perturb))
                    })
                    .collect();
                (actions, goals)
            };

            let entity = ENTITY_VOCAB[pool_rng.random_range(0..ENTITY_VOCAB.len())];
            StrategyTuple {
                user: format!("archive_{i:02}"),
                goals,
                entities: vec![entity.to_owned()],
                actions,
                window: TimeWindow::new(T::zero(), T::from_f64_lossy(600.0)).unwrap(),
            }
        })
        .collect();

    // Deal the near-repeat strategy to half the population so that a
    // recognizable share of nodes has directly relevant prior experience;
    // the remaining history slots are random pool draws.
    let anchored = anchored_half(spec.n_nodes, seed);

    (0..spec.n_nodes)
        .map(|idx| {
            let node_id = idx as u32 + 1;
            let mut rng = stream3(seed, tags::POPULATION, node_id as u64);
            let n_hist = rng.random_range(1..=5usize).min(strategy_pool_size);
            let mut slots: Vec<usize> = if strategy_pool_size > 1 {
                (1..strategy_pool_size).collect()
            } else {
                vec![0]
            };
            partial_shuffle(&mut slots, n_hist, &mut rng);
            let mut history: Vec<StrategyTuple<T>> =
                slots[..n_hist.min(slots.len())].iter().map(|&s| pool[s].clone()).collect();
            if anchored.binary_search(&idx).is_ok() && strategy_pool_size > 1 {
                history[0] = pool[0].clone();
            }
            NodeProfile {
                node_id,
                cpu_util: T::from_f64_lossy(rng.random_range(0.0..1.0)),
                bandwidth: T::from_f64_lossy(rng.random_range(0.0..1.0)),
                history,
                latency_class: match idx % 3 {
                    0 => LatencyClass::Fast,
                    1 => LatencyClass::Medium,
                    _ => LatencyClass::Slow,
                },
                dataset_ref: format!("node_{node_id}"),
            }
        })
        .collect()
}

/// Nodes holding directly relevant prior experience. These nodes also
/// operate in contexts concentrated near the strategy's intended operating
/// point (the test distribution), which is what makes similarity-based
/// selection informative.
fn anchored_half(n_nodes: usize, seed: u64) -> Vec<usize> {
    let mut anchored: Vec<usize> = (0..n_nodes).collect();
    let mut deal_rng = stream(seed, tags::POPULATION ^ 0x5EED);
    let take = n_nodes.div_ceil(2);
    partial_shuffle(&mut anchored, take, &mut deal_rng);
    anchored.truncate(take);
    anchored.sort_unstable();
    anchored
}

/// Fisher-Yates over the first `n` slots.
fn partial_shuffle(slots: &mut [usize], n: usize, rng: &mut impl Rng) {
    let len = slots.len();
    for i in 0..n.min(len.saturating_sub(1)) {
        let j = rng.random_range(i..len);
        slots.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DataSpec {
        DataSpec {
            n_nodes: 4,
            samples_per_node: [50, 80],
            input_dim: 6,
            context_shift: 1.0,
            noise_sd: 0.0,
            test_samples: 100,
            seed: 99,
        }
    }

    #[test]
    fn same_seed_gives_identical_datasets() {
        let a: DatasetBundle<f64> = generate_dataset(&spec()).unwrap();
        let b: DatasetBundle<f64> = generate_dataset(&spec()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn targets_lie_in_unit_interval() {
        let mut s = spec();
        s.noise_sd = 0.3;
        let bundle: DatasetBundle<f64> = generate_dataset(&s).unwrap();
        for part in bundle.partitions.iter().chain(std::iter::once(&bundle.test)) {
            for &y in &part.targets {
                assert!((0.0..=1.0).contains(&y));
            }
        }
    }

    #[test]
    fn zero_shift_gives_near_iid_feature_means() {
        let mut s = spec();
        s.context_shift = 0.0;
        s.samples_per_node = [400, 400];
        let bundle: DatasetBundle<f64> = generate_dataset(&s).unwrap();
        for part in &bundle.partitions {
            let d = part.dim();
            for j in 0..d {
                let mean: f64 =
                    part.inputs.iter().map(|row| row[j]).sum::<f64>() / part.len() as f64;
                assert!(mean.abs() < 0.2, "feature {j} mean {mean} too far from 0");
            }
        }
        for m in &bundle.truth.node_means {
            assert!(m.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn context_shift_separates_node_means() {
        let mut s = spec();
        s.samples_per_node = [400, 400];
        s.context_shift = 1.0;
        let bundle: DatasetBundle<f64> = generate_dataset(&s).unwrap();
        let ctx = bundle.truth.context_dim;
        let strat = s.input_dim - ctx;
        // Empirical context means recover the stored node means.
        for (part, truth_mean) in bundle.partitions.iter().zip(&bundle.truth.node_means) {
            for j in 0..ctx {
                let mean: f64 = part.inputs.iter().map(|row| row[strat + j]).sum::<f64>()
                    / part.len() as f64;
                assert!(
                    (mean - truth_mean[j]).abs() < 0.25,
                    "context {j}: empirical {mean} vs stored {}",
                    truth_mean[j]
                );
            }
        }
        // And the means actually differ across nodes.
        let mut max_dist: f64 = 0.0;
        for a in &bundle.truth.node_means {
            for b in &bundle.truth.node_means {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                max_dist = max_dist.max(d2.sqrt());
            }
        }
        assert!(max_dist > 0.0);
    }

    #[test]
    fn population_is_reproducible_and_round_robin() {
        let mut s = spec();
        s.n_nodes = 10;
        let a: Vec<NodeProfile<f64>> = generate_population(&s, 8, 5);
        let b: Vec<NodeProfile<f64>> = generate_population(&s, 8, 5);
        assert_eq!(a, b);
        let count = |class: LatencyClass| a.iter().filter(|p| p.latency_class == class).count();
        assert_eq!(count(LatencyClass::Fast), 4);
        assert_eq!(count(LatencyClass::Medium), 3);
        assert_eq!(count(LatencyClass::Slow), 3);
        for (i, p) in a.iter().enumerate() {
            assert_eq!(p.node_id, i as u32 + 1);
            assert!(!p.history.is_empty() && p.history.len() <= 5);
            assert!(p.cpu_util >= 0.0 && p.cpu_util <= 1.0);
            assert!(p.bandwidth >= 0.0 && p.bandwidth <= 1.0);
            p.history.iter().for_each(|h| h.validate().unwrap());
        }
    }

    #[test]
    fn single_strategy_pool_gives_identical_histories() {
        let s = spec();
        let pop: Vec<NodeProfile<f64>> = generate_population(&s, 1, 5);
        let first = &pop[0].history[0];
        for p in &pop {
            assert_eq!(p.history.len(), 1);
            assert_eq!(&p.history[0], first);
        }
    }
}
