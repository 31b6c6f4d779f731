//! Experiment configuration: one struct tree mirroring the config file
//! sections, with defaults that exercise every protocol path.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::fl::{Arch, TrainingConfig, UploadPolicy};
use crate::intent::parse_strategy;
use crate::scalar::Scalar;
use crate::similarity::{LatencyClass, SelectionConfig, SimilarityWeights};

/// Federated protocol under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SSAFL")]
    Ssafl,
    #[serde(rename = "SSAFLNoAdaptive")]
    SsaflNoAdaptive,
    FedAvg,
    FedAsyn,
    SemiAsyn,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ssafl,
        Method::SsaflNoAdaptive,
        Method::FedAvg,
        Method::FedAsyn,
        Method::SemiAsyn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ssafl => "SSAFL",
            Method::SsaflNoAdaptive => "SSAFLNoAdaptive",
            Method::FedAvg => "FedAvg",
            Method::FedAsyn => "FedAsyn",
            Method::SemiAsyn => "SemiAsyn",
        }
    }

    pub fn is_async(self) -> bool {
        !matches!(self, Method::FedAvg)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| format!("unknown method '{s}'"))
    }
}

/// Predictor architecture selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// "mlp" or "linear".
    pub kind: ModelKind,
    /// Hidden width for the MLP.
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Mlp,
            hidden: 16,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, input_dim: usize) -> Arch {
        match self.kind {
            ModelKind::Linear => Arch::Linear { d: input_dim },
            ModelKind::Mlp => Arch::Mlp {
                d: input_dim,
                h: self.hidden,
            },
        }
    }
}

/// Synthetic data generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    /// Number of nodes (I).
    pub n_nodes: usize,
    /// Inclusive range for per-node sample counts.
    pub samples_per_node: [usize; 2],
    /// Feature dimension (d).
    pub input_dim: usize,
    /// Radius of the per-node context-mean ball; controls feature skew.
    pub context_shift: f64,
    /// Standard deviation of target noise.
    pub noise_sd: f64,
    /// Held-out test set size.
    pub test_samples: usize,
    /// Generation seed (combined with the run seed).
    pub seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            n_nodes: 10,
            samples_per_node: [200, 400],
            input_dim: 16,
            context_shift: 0.25,
            noise_sd: 0.02,
            test_samples: 1000,
            seed: 7,
        }
    }
}

impl DataSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_nodes < 2 {
            return Err(SimError::BadSpec("data.n_nodes must be >= 2".into()));
        }
        if self.input_dim < 2 {
            return Err(SimError::BadSpec("data.input_dim must be >= 2".into()));
        }
        if self.samples_per_node[0] == 0 || self.samples_per_node[0] > self.samples_per_node[1] {
            return Err(SimError::BadSpec(
                "data.samples_per_node must be a non-empty positive range".into(),
            ));
        }
        if self.noise_sd < 0.0 || !self.noise_sd.is_finite() {
            return Err(SimError::BadSpec("data.noise_sd must be >= 0".into()));
        }
        if self.test_samples < 2 {
            return Err(SimError::BadSpec("data.test_samples must be >= 2".into()));
        }
        Ok(())
    }
}

/// Aggregation-window parameters of the server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default = "AggregationConfig::default")]
pub struct AggregationConfig<T: Scalar> {
    /// Floor applied to normalized aggregation weights.
    pub w_min: T,
    /// Aggregate when this many updates have arrived.
    pub micro_batch: usize,
    /// Close a partially filled window after this much simulated time.
    /// Only relevant when `micro_batch > 1`.
    pub window_secs: f64,
}

impl<T: Scalar> Default for AggregationConfig<T> {
    fn default() -> Self {
        AggregationConfig {
            w_min: T::from_f64_lossy(0.1),
            micro_batch: 4,
            window_secs: 5.0,
        }
    }
}

impl<T: Scalar> AggregationConfig<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        let w = self.w_min.to_f64_lossy();
        if !(0.0..1.0).contains(&w) {
            return Err(SimError::BadSpec(format!(
                "aggregation.w_min must lie in [0,1), got {w}"
            )));
        }
        if self.micro_batch == 0 {
            return Err(SimError::BadSpec("aggregation.micro_batch must be >= 1".into()));
        }
        if w * self.micro_batch as f64 > 1.0 {
            return Err(SimError::BadSpec(format!(
                "aggregation.w_min ({w}) times micro_batch ({}) exceeds 1; protected weights cannot renormalize",
                self.micro_batch
            )));
        }
        if !(self.window_secs > 0.0) {
            return Err(SimError::BadSpec("aggregation.window_secs must be positive".into()));
        }
        Ok(())
    }
}

/// Baseline-specific knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default = "BaselineConfig::default")]
pub struct BaselineConfig<T: Scalar> {
    /// Base mixing rate for the immediate-update baseline.
    pub fedasync_alpha: T,
    /// Polynomial staleness decay exponent for the immediate-update baseline.
    pub fedasync_decay: T,
    /// Quorum size for the buffered baseline.
    pub semiasync_k: usize,
}

impl<T: Scalar> Default for BaselineConfig<T> {
    fn default() -> Self {
        BaselineConfig {
            fedasync_alpha: T::from_f64_lossy(0.6),
            fedasync_decay: T::from_f64_lossy(0.5),
            semiasync_k: 3,
        }
    }
}

impl<T: Scalar> BaselineConfig<T> {
    pub fn validate(&self, n_nodes: usize) -> Result<(), SimError> {
        let a = self.fedasync_alpha.to_f64_lossy();
        if !(a > 0.0 && a <= 1.0) {
            return Err(SimError::BadSpec(format!(
                "baseline.fedasync_alpha must lie in (0,1], got {a}"
            )));
        }
        if self.fedasync_decay < T::zero() {
            return Err(SimError::BadSpec(
                "baseline.fedasync_decay must be >= 0".into(),
            ));
        }
        if self.semiasync_k == 0 || self.semiasync_k > n_nodes {
            return Err(SimError::BadSpec(format!(
                "baseline.semiasync_k must lie in [1, n_nodes], got {}",
                self.semiasync_k
            )));
        }
        Ok(())
    }
}

/// Per-class latency model for heterogeneous clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    /// Seconds of local training per epoch, before the class factor.
    pub train_time_base: f64,
    /// Seconds per upload, before the class factor.
    pub upload_time_base: f64,
    pub factor_fast: f64,
    pub factor_medium: f64,
    pub factor_slow: f64,
    /// Multiplicative jitter amplitude in [0,1): durations scale by
    /// `1 + jitter_pct * u` with `u ~ U(-1,1)`.
    pub jitter_pct: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            train_time_base: 1.0,
            upload_time_base: 0.5,
            factor_fast: 1.0,
            factor_medium: 2.5,
            factor_slow: 5.0,
            jitter_pct: 0.1,
        }
    }
}

impl LatencyModel {
    pub fn class_factor(&self, class: LatencyClass) -> f64 {
        match class {
            LatencyClass::Fast => self.factor_fast,
            LatencyClass::Medium => self.factor_medium,
            LatencyClass::Slow => self.factor_slow,
        }
    }

    pub fn slowest_factor(&self) -> f64 {
        self.factor_fast.max(self.factor_medium).max(self.factor_slow)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("latency.train_time_base", self.train_time_base),
            ("latency.upload_time_base", self.upload_time_base),
            ("latency.factor_fast", self.factor_fast),
            ("latency.factor_medium", self.factor_medium),
            ("latency.factor_slow", self.factor_slow),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::BadSpec(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.jitter_pct) {
            return Err(SimError::BadSpec(format!(
                "latency.jitter_pct must lie in [0,1), got {}",
                self.jitter_pct
            )));
        }
        Ok(())
    }
}

/// Run termination rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopRule {
    /// Maximum number of aggregation events.
    pub t_max: u64,
    /// Stop once the global training loss reaches this level.
    pub loss_floor: f64,
    /// Stop when no entry in the last `patience` evaluations improved on the
    /// best prior loss by at least `rel_improve` (relative).
    pub patience: usize,
    pub rel_improve: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            t_max: 190,
            loss_floor: 1e-3,
            patience: 25,
            rel_improve: 7e-3,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.t_max < 1 {
            return Err(SimError::BadSpec("stop.t_max must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(SimError::BadSpec("stop.patience must be >= 1".into()));
        }
        if self.rel_improve < 0.0 || !self.rel_improve.is_finite() {
            return Err(SimError::BadSpec("stop.rel_improve must be >= 0".into()));
        }
        if !self.loss_floor.is_finite() {
            return Err(SimError::BadSpec("stop.loss_floor must be finite".into()));
        }
        Ok(())
    }
}

/// Complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default = "ExperimentConfig::default")]
pub struct ExperimentConfig<T: Scalar> {
    /// The strategy under verification, in DSL form.
    pub strategy: String,
    /// Size of the seeded pool historical strategies are drawn from.
    pub strategy_pool: usize,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub data: DataSpec,
    pub selection: SelectionConfig<T>,
    pub sim_weights: SimilarityWeights<T>,
    pub training: TrainingConfig<T>,
    pub upload: UploadPolicy<T>,
    pub aggregation: AggregationConfig<T>,
    pub baseline: BaselineConfig<T>,
    pub latency: LatencyModel,
    pub stop: StopRule,
}

impl<T: Scalar> Default for ExperimentConfig<T> {
    fn default() -> Self {
        ExperimentConfig {
            strategy: "user=operator_02; goal latency < 15; goal loss < 1; \
                       entity ultrasonic_module; action qos_adjustment(priority=5); \
                       action bandwidth_allocation(mbps=100); window 0 600"
                .into(),
            strategy_pool: 8,
            methods: Method::ALL.to_vec(),
            seeds: vec![101, 102, 103, 104, 105],
            output_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            data: DataSpec::default(),
            selection: SelectionConfig::default(),
            sim_weights: SimilarityWeights::default(),
            training: TrainingConfig::default(),
            upload: UploadPolicy::default(),
            aggregation: AggregationConfig::default(),
            baseline: BaselineConfig::default(),
            latency: LatencyModel::default(),
            stop: StopRule::default(),
        }
    }
}

impl<T: Scalar> ExperimentConfig<T> {
    /// Validate every section; error messages name the offending field.
    pub fn validate(&self) -> Result<(), SimError> {
        parse_strategy::<T>(&self.strategy)
            .map_err(|e| SimError::BadSpec(format!("strategy: {e}")))?;
        if self.strategy_pool == 0 {
            return Err(SimError::BadSpec("strategy_pool must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(SimError::BadSpec("methods must be non-empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(SimError::BadSpec("seeds must be non-empty".into()));
        }
        if self.model.hidden == 0 {
            return Err(SimError::BadSpec("model.hidden must be >= 1".into()));
        }
        self.data.validate()?;
        self.selection
            .validate()
            .map_err(|e| SimError::BadSpec(e.to_string()))?;
        self.sim_weights
            .validate()
            .map_err(|e| SimError::BadSpec(e.to_string()))?;
        self.training
            .validate()
            .map_err(|e| SimError::BadSpec(e.to_string()))?;
        self.upload
            .validate()
            .map_err(|e| SimError::BadSpec(e.to_string()))?;
        self.aggregation.validate()?;
        self.baseline.validate(self.data.n_nodes)?;
        self.latency.validate()?;
        self.stop.validate()?;
        Ok(())
    }
}
