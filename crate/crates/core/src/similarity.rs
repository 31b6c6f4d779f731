//! Strategy similarity scoring and similarity-aware node selection.
//!
//! A node's relevance to a strategy combines two signals over its history:
//! Jaccard overlap of action-kind sets and exponential-decay closeness of
//! goal thresholds. Selection blends that similarity with a resource score
//! and keeps nodes whose suitability clears a threshold.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::{Goal, StrategyTuple};
use crate::scalar::Scalar;

/// Tolerance for the `x + y = 1` weight invariants.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimilarityError {
    #[error("condition similarity undefined: goal '{0}' has a zero threshold")]
    ZeroThreshold(String),
    #[error("no node cleared the selection threshold")]
    EmptySelection,
    #[error("invalid {name}: {message}")]
    BadWeights { name: &'static str, message: String },
}

/// Weights of the two similarity components plus the condition decay scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default = "SimilarityWeights::default")]
pub struct SimilarityWeights<T: Scalar> {
    /// Action-overlap weight.
    pub gamma1: T,
    /// Condition-closeness weight.
    pub gamma2: T,
    /// Decay scale for threshold differences.
    pub a_g: T,
}

impl<T: Scalar> Default for SimilarityWeights<T> {
    fn default() -> Self {
        SimilarityWeights {
            gamma1: T::from_f64_lossy(0.6),
            gamma2: T::from_f64_lossy(0.4),
            a_g: T::from_f64_lossy(2.0),
        }
    }
}

impl<T: Scalar> SimilarityWeights<T> {
    pub fn validate(&self) -> Result<(), SimilarityError> {
        check_unit_pair("sim_weights.gamma", self.gamma1, self.gamma2)?;
        if !(self.a_g > T::zero()) {
            return Err(SimilarityError::BadWeights {
                name: "sim_weights.a_g",
                message: format!("decay scale must be positive, got {}", self.a_g),
            });
        }
        Ok(())
    }
}

/// Selection weights and the suitability threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default = "SelectionConfig::default")]
pub struct SelectionConfig<T: Scalar> {
    /// Similarity weight in the suitability score.
    pub beta1: T,
    /// Resource weight in the suitability score.
    pub beta2: T,
    /// Idle-CPU weight in the resource score.
    pub delta1: T,
    /// Bandwidth weight in the resource score.
    pub delta2: T,
    /// Minimum suitability for participation.
    pub tau_s: T,
}

impl<T: Scalar> Default for SelectionConfig<T> {
    fn default() -> Self {
        SelectionConfig {
            beta1: T::from_f64_lossy(0.7),
            beta2: T::from_f64_lossy(0.3),
            delta1: T::from_f64_lossy(0.5),
            delta2: T::from_f64_lossy(0.5),
            tau_s: T::from_f64_lossy(0.5),
        }
    }
}

impl<T: Scalar> SelectionConfig<T> {
    pub fn validate(&self) -> Result<(), SimilarityError> {
        check_unit_pair("selection.beta", self.beta1, self.beta2)?;
        check_unit_pair("selection.delta", self.delta1, self.delta2)?;
        if self.tau_s < T::zero() || self.tau_s > T::one() {
            return Err(SimilarityError::BadWeights {
                name: "selection.tau_s",
                message: format!("threshold must lie in [0,1], got {}", self.tau_s),
            });
        }
        Ok(())
    }
}

fn check_unit_pair<T: Scalar>(name: &'static str, a: T, b: T) -> Result<(), SimilarityError> {
    let in_unit = |x: T| x >= T::zero() && x <= T::one();
    if !in_unit(a) || !in_unit(b) {
        return Err(SimilarityError::BadWeights {
            name,
            message: format!("weights must lie in [0,1], got ({a}, {b})"),
        });
    }
    let sum = (a + b).to_f64_lossy();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(SimilarityError::BadWeights {
            name,
            message: format!("weights must sum to 1, got {sum}"),
        });
    }
    Ok(())
}

/// Latency class of a node in the heterogeneity model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatencyClass {
    Fast,
    Medium,
    Slow,
}

/// Per-node state the selector scores against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NodeProfile<T: Scalar> {
    /// 1-based node index, unique within a population.
    pub node_id: u32,
    /// Normalized CPU utilization in [0,1].
    pub cpu_util: T,
    /// Normalized available bandwidth in [0,1].
    pub bandwidth: T,
    /// Previously deployed strategies, most recent last.
    pub history: Vec<StrategyTuple<T>>,
    pub latency_class: LatencyClass,
    /// Identifier of the node's local dataset partition.
    pub dataset_ref: String,
}

/// One selected node with the scores that selected it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NodeSelection<T: Scalar> {
    pub node_id: u32,
    pub suitability: T,
    pub similarity: T,
}

/// Jaccard similarity of two action-kind sets. Two empty sets count as
/// identical.
pub fn action_similarity<T: Scalar>(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> T {
    if a.is_empty() && b.is_empty() {
        return T::one();
    }
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    T::from_usize(inter).unwrap() / T::from_usize(union).unwrap()
}

/// Pairwise condition similarity: exponential decay in the relative
/// threshold gap when metrics match, zero otherwise.
pub fn condition_similarity<T: Scalar>(
    g: &Goal<T>,
    g2: &Goal<T>,
    a_g: T,
) -> Result<T, SimilarityError> {
    if g.metric != g2.metric {
        return Ok(T::zero());
    }
    if g.threshold == T::zero() {
        return Err(SimilarityError::ZeroThreshold(g.metric.clone()));
    }
    let gap = (g.threshold - g2.threshold).abs() / g.threshold.abs();
    Ok((-a_g * gap).exp())
}

/// Mean over the current goals of the best condition match in the
/// historical goals. The max over an empty history is zero.
pub fn goal_set_similarity<T: Scalar>(
    current: &[Goal<T>],
    historical: &[Goal<T>],
    a_g: T,
) -> Result<T, SimilarityError> {
    assert!(!current.is_empty(), "current goal set must be non-empty");
    let mut total = T::zero();
    for g in current {
        let mut best = T::zero();
        for g2 in historical {
            let h = condition_similarity(g, g2, a_g)?;
            if h > best {
                best = h;
            }
        }
        total = total + best;
    }
    Ok(total / T::from_usize(current.len()).unwrap())
}

/// Strategy similarity of a node: the best weighted action/condition match
/// across its historical strategies. Empty history scores zero.
pub fn strategy_similarity<T: Scalar>(
    s: &StrategyTuple<T>,
    profile: &NodeProfile<T>,
    w: &SimilarityWeights<T>,
) -> Result<T, SimilarityError> {
    let kinds = s.action_kinds();
    let mut best = T::zero();
    for hist in &profile.history {
        let act: T = action_similarity(&kinds, &hist.action_kinds());
        let cond = goal_set_similarity(&s.goals, &hist.goals, w.a_g)?;
        let sim = w.gamma1 * act + w.gamma2 * cond;
        if sim > best {
            best = sim;
        }
    }
    Ok(best)
}

/// Resource availability: weighted idle CPU plus available bandwidth.
pub fn resource_score<T: Scalar>(profile: &NodeProfile<T>, c: &SelectionConfig<T>) -> T {
    c.delta1 * (T::one() - profile.cpu_util) + c.delta2 * profile.bandwidth
}

/// Suitability: weighted blend of similarity and resource availability.
pub fn suitability<T: Scalar>(sim: T, res: T, c: &SelectionConfig<T>) -> T {
    c.beta1 * sim + c.beta2 * res
}

/// Score every node and keep those with suitability >= tau_s, ordered by
/// node id.
pub fn select_nodes<T: Scalar>(
    s: &StrategyTuple<T>,
    population: &[NodeProfile<T>],
    c: &SelectionConfig<T>,
    w: &SimilarityWeights<T>,
) -> Result<Vec<NodeSelection<T>>, SimilarityError> {
    let mut scored = score_nodes(s, population, c, w)?;
    scored.retain(|n| n.suitability >= c.tau_s);
    if scored.is_empty() {
        return Err(SimilarityError::EmptySelection);
    }
    Ok(scored)
}

/// Score every node without applying the threshold, ordered by node id.
pub fn score_nodes<T: Scalar>(
    s: &StrategyTuple<T>,
    population: &[NodeProfile<T>],
    c: &SelectionConfig<T>,
    w: &SimilarityWeights<T>,
) -> Result<Vec<NodeSelection<T>>, SimilarityError> {
    let mut scored = Vec::with_capacity(population.len());
    for p in population {
        let sim = strategy_similarity(s, p, w)?;
        let res = resource_score(p, c);
        scored.push(NodeSelection {
            node_id: p.node_id,
            suitability: suitability(sim, res, c),
            similarity: sim,
        });
    }
    scored.sort_by_key(|n| n.node_id);
    Ok(scored)
}
