//! Event-driven federated runs: similarity-aware selection, thresholded
//! client uploads, micro-batch aggregation, and the three baseline
//! protocols, all on one deterministic event queue.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, Method};
use super::data::{generate_dataset, generate_population};
use super::diagnostics::{estimate_trigger_bias, measure_staleness, stop_check};
use super::event::{EventKind, EventQueue};
use super::trace::{EventTrace, MetricsRow, RunSummary, TraceKind, WindowRecord};
use super::SimError;
use crate::fl::{
    apply_update, evaluate, fedasync_update, fedavg_round, global_loss, local_train, pre_weight,
    protected_weights, update_delta, upload_threshold, FlError, LocalDataset, ModelState,
    TrainingConfig, DIVERGENCE_LOSS_CAP,
};
use crate::intent::{parse_strategy, StrategyTuple};
use crate::rng::{mix, stream3, tags};
use crate::scalar::Scalar;
use crate::similarity::{score_nodes, select_nodes, LatencyClass, NodeProfile, SimilarityError};

/// Hard cap on processed queue events per run; trips only on pathological
/// configurations where aggregations never happen.
const MAX_WALL_EVENTS: u64 = 50_000;

/// Everything a run consumes. Built from config seeds by [`build_inputs`],
/// or assembled directly for controlled experiments.
#[derive(Debug, Clone)]
pub struct SimInputs<T: Scalar> {
    pub strategy: StrategyTuple<T>,
    pub population: Vec<NodeProfile<T>>,
    /// Per-node datasets, aligned with `population`.
    pub partitions: Vec<LocalDataset<T>>,
    pub test: LocalDataset<T>,
    pub init: ModelState<T>,
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct RunOutput<T: Scalar> {
    pub method: Method,
    pub seed: u64,
    pub final_model: ModelState<T>,
    pub trace: EventTrace<T>,
    pub metrics: Vec<MetricsRow<T>>,
    pub summary: RunSummary,
}

/// Derive a run's data, population, and initial model from the config and a
/// run seed. The same seed yields identical inputs for every method.
pub fn build_inputs<T: Scalar>(
    cfg: &ExperimentConfig<T>,
    seed: u64,
) -> Result<SimInputs<T>, SimError> {
    let strategy = parse_strategy::<T>(&cfg.strategy)?;
    let mut data_spec = cfg.data.clone();
    data_spec.seed = mix(seed, cfg.data.seed);
    let bundle = generate_dataset::<T>(&data_spec)?;
    let population = generate_population::<T>(&data_spec, cfg.strategy_pool, data_spec.seed);
    let init = ModelState::init(
        cfg.model.arch(cfg.data.input_dim),
        mix(seed, tags::MODEL_INIT),
    );
    Ok(SimInputs {
        strategy,
        population,
        partitions: bundle.partitions,
        test: bundle.test,
        init,
    })
}

/// Run one method end to end from config-derived inputs.
pub fn run_method<T: Scalar>(
    method: Method,
    cfg: &ExperimentConfig<T>,
    seed: u64,
) -> Result<RunOutput<T>, SimError> {
    cfg.validate()?;
    let inputs = build_inputs(cfg, seed)?;
    run_with_inputs(method, cfg, seed, &inputs)
}

/// The similarity-aware protocol.
pub fn run_ssafl<T: Scalar>(
    cfg: &ExperimentConfig<T>,
    seed: u64,
) -> Result<RunOutput<T>, SimError> {
    run_method(Method::Ssafl, cfg, seed)
}

/// One of the comparison protocols (everything except the similarity-aware
/// ones).
pub fn run_baseline<T: Scalar>(
    method: Method,
    cfg: &ExperimentConfig<T>,
    seed: u64,
) -> Result<RunOutput<T>, SimError> {
    assert!(
        matches!(method, Method::FedAvg | Method::FedAsyn | Method::SemiAsyn),
        "run_baseline drives FedAvg/FedAsyn/SemiAsyn, got {method}"
    );
    run_method(method, cfg, seed)
}

/// Run a method against explicit inputs (used by diagnostics and tests to
/// control populations and datasets directly).
pub fn run_with_inputs<T: Scalar>(
    method: Method,
    cfg: &ExperimentConfig<T>,
    seed: u64,
    inputs: &SimInputs<T>,
) -> Result<RunOutput<T>, SimError> {
    Engine::new(method, cfg, seed, inputs)?.run()
}

struct Pending<T: Scalar> {
    node_id: u32,
    delta: Vec<T>,
    norm: T,
    sim: T,
    base_version: u64,
    model: ModelState<T>,
    n_samples: usize,
}

struct ClientRuntime<T: Scalar> {
    partition: usize,
    class: LatencyClass,
    sim: T,
    eps: T,
    base: ModelState<T>,
    base_version: u64,
    local: ModelState<T>,
    train_rng: ChaCha8Rng,
    latency_rng: ChaCha8Rng,
    inflight: Option<Pending<T>>,
}

struct Engine<'a, T: Scalar> {
    method: Method,
    cfg: &'a ExperimentConfig<T>,
    inputs: &'a SimInputs<T>,
    seed: u64,
    queue: EventQueue,
    clients: BTreeMap<u32, ClientRuntime<T>>,
    global: ModelState<T>,
    version: u64,
    qbuf: Vec<Pending<T>>,
    window_gen: u64,
    trace: EventTrace<T>,
    metrics: Vec<MetricsRow<T>>,
    stopped: bool,
    selection_fallback: bool,
    time_cap: f64,
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn new(
        method: Method,
        cfg: &'a ExperimentConfig<T>,
        seed: u64,
        inputs: &'a SimInputs<T>,
    ) -> Result<Self, SimError> {
        if inputs.population.is_empty() {
            return Err(SimError::BadSpec("population is empty".into()));
        }
        if inputs.population.len() != inputs.partitions.len() {
            return Err(SimError::BadSpec(format!(
                "{} profiles but {} partitions",
                inputs.population.len(),
                inputs.partitions.len()
            )));
        }

        // Participants: threshold selection for the similarity-aware
        // protocols, everyone for the baselines.
        let similarity_aware = matches!(method, Method::Ssafl | Method::SsaflNoAdaptive);
        let mut selection_fallback = false;
        let selected: Vec<(usize, T)> = if similarity_aware {
            match select_nodes(
                &inputs.strategy,
                &inputs.population,
                &cfg.selection,
                &cfg.sim_weights,
            ) {
                Ok(picked) => picked
                    .iter()
                    .map(|n| (index_of(&inputs.population, n.node_id), n.similarity))
                    .collect(),
                Err(SimilarityError::EmptySelection) => {
                    // Fall back to the single best-suited node so the run
                    // can proceed; lowest id wins ties.
                    selection_fallback = true;
                    let scored = score_nodes(
                        &inputs.strategy,
                        &inputs.population,
                        &cfg.selection,
                        &cfg.sim_weights,
                    )
                    .map_err(|e| SimError::BadSpec(e.to_string()))?;
                    let best = scored
                        .iter()
                        .max_by(|a, b| {
                            a.suitability
                                .partial_cmp(&b.suitability)
                                .unwrap()
                                .then(b.node_id.cmp(&a.node_id))
                        })
                        .expect("population is non-empty");
                    vec![(index_of(&inputs.population, best.node_id), best.similarity)]
                }
                Err(e) => return Err(SimError::BadSpec(e.to_string())),
            }
        } else {
            (0..inputs.population.len())
                .map(|i| (i, T::zero()))
                .collect()
        };

        let mut clients = BTreeMap::new();
        for (idx, sim) in selected {
            let profile = &inputs.population[idx];
            let eps = if similarity_aware {
                upload_threshold(&cfg.upload, sim)
            } else {
                T::zero()
            };
            clients.insert(
                profile.node_id,
                ClientRuntime {
                    partition: idx,
                    class: profile.latency_class,
                    sim,
                    eps,
                    base: inputs.init.clone(),
                    base_version: 0,
                    local: inputs.init.clone(),
                    train_rng: stream3(
                        mix(seed, cfg.training.seed),
                        tags::TRAIN,
                        profile.node_id as u64,
                    ),
                    latency_rng: stream3(seed, tags::LATENCY, profile.node_id as u64),
                    inflight: None,
                },
            );
        }

        let round_time = (cfg.latency.train_time_base * cfg.training.local_epochs as f64
            + cfg.latency.upload_time_base)
            * cfg.latency.slowest_factor()
            * (1.0 + cfg.latency.jitter_pct);
        let time_cap = round_time * (cfg.stop.t_max as f64 + 2.0) * 4.0;

        Ok(Engine {
            method,
            cfg,
            inputs,
            seed,
            queue: EventQueue::new(),
            clients,
            global: inputs.init.clone(),
            version: 0,
            qbuf: Vec::new(),
            window_gen: 0,
            trace: EventTrace::new(inputs.population.iter().map(|p| p.node_id)),
            metrics: Vec::new(),
            stopped: false,
            selection_fallback,
            time_cap,
        })
    }

    fn run(mut self) -> Result<RunOutput<T>, SimError> {
        // Pre-training baseline evaluation, then kick off every participant.
        self.record_eval(0.0)?;
        let ids: Vec<u32> = self.clients.keys().copied().collect();
        for id in ids {
            let dur = self.train_duration(id);
            self.queue.push(dur, EventKind::TrainDone { node: id });
        }

        let mut processed: u64 = 0;
        while !self.stopped {
            let Some(ev) = self.queue.pop() else { break };
            if ev.time > self.time_cap {
                break;
            }
            processed += 1;
            if processed > MAX_WALL_EVENTS {
                break;
            }
            match ev.kind {
                EventKind::TrainDone { node } => self.handle_train_done(node, ev.time)?,
                EventKind::UploadArrive { node } => self.handle_upload(node, ev.time)?,
                EventKind::WindowClose { generation } => {
                    if generation == self.window_gen && !self.qbuf.is_empty() {
                        self.aggregate_deltas(ev.time)?;
                    }
                }
            }
        }

        let tau_max = measure_staleness(&self.trace).tau_max;
        let zeta_hat = if self.method == Method::Ssafl {
            estimate_trigger_bias(&self.trace)
                .ok()
                .map(|z| z.to_f64_lossy())
        } else {
            None
        };
        let last = self.metrics.last().expect("at least the baseline evaluation");
        let summary = RunSummary {
            method: self.method.name().to_owned(),
            seed: self.seed,
            final_mae: last.mae.to_f64_lossy(),
            final_rmse: last.rmse.to_f64_lossy(),
            final_r2: last.r2.to_f64_lossy(),
            total_uploads: self.trace.total_uploads(),
            per_node_gamma: self.trace.gamma.clone(),
            tau_max,
            zeta_hat,
            wall_events: self.trace.events.len() as u64,
            aggregations: self.version,
            selected_nodes: self.clients.keys().copied().collect(),
            selection_fallback: self.selection_fallback,
        };
        Ok(RunOutput {
            method: self.method,
            seed: self.seed,
            final_model: self.global,
            trace: self.trace,
            metrics: self.metrics,
            summary,
        })
    }

    fn jitter(rng: &mut ChaCha8Rng, pct: f64) -> f64 {
        if pct == 0.0 {
            1.0
        } else {
            1.0 + pct * rng.random_range(-1.0..1.0)
        }
    }

    fn train_duration(&mut self, node: u32) -> f64 {
        let lat = &self.cfg.latency;
        let epochs = self.cfg.training.local_epochs as f64;
        let c = self.clients.get_mut(&node).expect("known client");
        lat.train_time_base
            * epochs
            * lat.class_factor(c.class)
            * Self::jitter(&mut c.latency_rng, lat.jitter_pct)
    }

    fn upload_duration(&mut self, node: u32) -> f64 {
        let lat = &self.cfg.latency;
        let c = self.clients.get_mut(&node).expect("known client");
        lat.upload_time_base
            * lat.class_factor(c.class)
            * Self::jitter(&mut c.latency_rng, lat.jitter_pct)
    }

    fn handle_train_done(&mut self, node: u32, t: f64) -> Result<(), SimError> {
        self.trace.bump_round(node);
        let thresholded = matches!(self.method, Method::Ssafl | Method::SsaflNoAdaptive);
        let c = self.clients.get_mut(&node).expect("known client");
        let sub_seed = c.train_rng.next_u64();
        let tcfg = TrainingConfig {
            seed: sub_seed,
            ..self.cfg.training
        };
        c.local = local_train(&c.local, &self.inputs.partitions[c.partition], &tcfg)?;
        let (delta, norm) = update_delta(&c.local, &c.base)?;
        let accepted = if thresholded { norm >= c.eps } else { true };
        let eps = c.eps;
        if accepted {
            c.inflight = Some(Pending {
                node_id: node,
                delta,
                norm,
                sim: c.sim,
                base_version: c.base_version,
                model: c.local.clone(),
                n_samples: self.inputs.partitions[c.partition].len(),
            });
        }
        self.trace.push(
            t,
            Some(node),
            TraceKind::TrainDone,
            Some(norm),
            Some(eps),
            None,
            Some(accepted),
        );
        if accepted {
            let dur = self.upload_duration(node);
            self.queue.push(t + dur, EventKind::UploadArrive { node });
        } else {
            // Keep training against the same base to accumulate a larger
            // update.
            let dur = self.train_duration(node);
            self.queue.push(t + dur, EventKind::TrainDone { node });
        }
        Ok(())
    }

    fn handle_upload(&mut self, node: u32, t: f64) -> Result<(), SimError> {
        let c = self.clients.get_mut(&node).expect("known client");
        let pending = c.inflight.take().expect("upload arrival without a pending update");
        let eps = c.eps;
        let tau = self.version - pending.base_version;
        self.trace.bump_gamma(node);
        self.trace.push(
            t,
            Some(node),
            TraceKind::UploadArrive,
            Some(pending.norm),
            Some(eps),
            Some(tau),
            Some(true),
        );
        match self.method {
            Method::Ssafl | Method::SsaflNoAdaptive => {
                self.qbuf.push(pending);
                if self.qbuf.len() >= self.cfg.aggregation.micro_batch {
                    self.aggregate_deltas(t)?;
                } else if self.qbuf.len() == 1 {
                    self.queue.push(
                        t + self.cfg.aggregation.window_secs,
                        EventKind::WindowClose {
                            generation: self.window_gen,
                        },
                    );
                }
            }
            Method::FedAsyn => {
                self.global = fedasync_update(
                    &self.global,
                    &pending.model,
                    self.cfg.baseline.fedasync_alpha,
                    tau,
                    self.cfg.baseline.fedasync_decay,
                )?;
                self.version += 1;
                self.trace.push(
                    t,
                    Some(node),
                    TraceKind::Aggregate,
                    Some(pending.norm),
                    None,
                    Some(tau),
                    None,
                );
                self.deliver(&[node], t);
                self.record_eval(t)?;
            }
            Method::SemiAsyn | Method::FedAvg => {
                self.qbuf.push(pending);
                let quorum = match self.method {
                    Method::SemiAsyn => self.cfg.baseline.semiasync_k.min(self.clients.len()),
                    _ => self.clients.len(),
                };
                if self.qbuf.len() >= quorum {
                    self.aggregate_models(t)?;
                }
            }
        }
        Ok(())
    }

    /// Similarity-weighted delta aggregation over the buffered window.
    fn aggregate_deltas(&mut self, t: f64) -> Result<(), SimError> {
        let members: Vec<Pending<T>> = self.qbuf.drain(..).collect();
        let n = members.len();
        let uniform = vec![T::one() / T::from_usize(n).unwrap(); n];
        let adaptive = self.method == Method::Ssafl;
        let (pre_norm, weights) = if adaptive {
            let pre: Vec<T> = members.iter().map(|p| pre_weight(p.sim, p.norm)).collect();
            match protected_weights(&pre, self.cfg.aggregation.w_min) {
                Ok(w) => {
                    let total: T = pre.iter().copied().sum();
                    let pn: Vec<T> = pre.iter().map(|&x| x / total).collect();
                    (pn, w)
                }
                // Zero-similarity contributors still passed selection;
                // aggregate them uniformly rather than dropping the window.
                Err(FlError::AllZero) => (uniform.clone(), uniform),
                Err(e) => return Err(e.into()),
            }
        } else {
            (uniform.clone(), uniform)
        };

        let deltas: Vec<&[T]> = members.iter().map(|p| p.delta.as_slice()).collect();
        self.global = apply_update(&self.global, &deltas, &weights)?;
        self.version += 1;
        self.window_gen += 1;
        let event_id = self
            .trace
            .push(t, None, TraceKind::Aggregate, None, None, None, None);

        let dim = self.global.params.len();
        let mut combined_pre = vec![T::zero(); dim];
        let mut combined_final = vec![T::zero(); dim];
        for (i, p) in members.iter().enumerate() {
            for j in 0..dim {
                combined_pre[j] = combined_pre[j] + pre_norm[i] * p.delta[j];
                combined_final[j] = combined_final[j] + weights[i] * p.delta[j];
            }
        }
        self.trace.windows.push(WindowRecord {
            event_id,
            node_ids: members.iter().map(|p| p.node_id).collect(),
            pre_weights: pre_norm,
            weights,
            delta_norms: members.iter().map(|p| p.norm).collect(),
            combined_pre,
            combined_final,
        });

        let ids: Vec<u32> = members.iter().map(|p| p.node_id).collect();
        self.deliver(&ids, t);
        self.record_eval(t)
    }

    /// Dataset-size-weighted model average over the buffered quorum
    /// (FedAvg round / SemiAsyn batch).
    fn aggregate_models(&mut self, t: f64) -> Result<(), SimError> {
        let members: Vec<Pending<T>> = self.qbuf.drain(..).collect();
        let ids: Vec<u32> = members.iter().map(|p| p.node_id).collect();
        let locals: Vec<(ModelState<T>, usize)> = members
            .into_iter()
            .map(|p| (p.model, p.n_samples))
            .collect();
        self.global = fedavg_round(&self.global, &locals)?;
        self.version += 1;
        self.trace
            .push(t, None, TraceKind::Aggregate, None, None, None, None);
        self.deliver(&ids, t);
        self.record_eval(t)
    }

    /// Hand the fresh global model to the nodes whose updates were just
    /// applied; everyone else keeps their stale base.
    fn deliver(&mut self, ids: &[u32], t: f64) {
        for &id in ids {
            let global = self.global.clone();
            let version = self.version;
            let c = self.clients.get_mut(&id).expect("known client");
            c.local = global.clone();
            c.base = global;
            c.base_version = version;
            let dur = self.train_duration(id);
            self.queue.push(t + dur, EventKind::TrainDone { node: id });
        }
    }

    /// Evaluate the global model, append trace/metrics entries, and apply
    /// the stop rule.
    fn record_eval(&mut self, t: f64) -> Result<(), SimError> {
        let loss = global_loss(&self.global, &self.inputs.partitions);
        let lf = loss.to_f64_lossy();
        if !lf.is_finite() || lf > DIVERGENCE_LOSS_CAP {
            return Err(SimError::Fl(FlError::NonFiniteLoss(lf)));
        }
        let m = evaluate(&self.global, &self.inputs.test)?;
        let event_id = self
            .trace
            .push(t, None, TraceKind::Eval, None, None, None, None);
        self.trace.loss_history.push((event_id, loss));
        self.metrics.push(MetricsRow {
            event_id,
            sim_time: t,
            mae: m.mae,
            rmse: m.rmse,
            r2: m.r2,
            global_loss: loss,
        });
        if stop_check(&self.trace, &self.cfg.stop) {
            self.stopped = true;
        }
        Ok(())
    }
}

fn index_of<T: Scalar>(population: &[NodeProfile<T>], node_id: u32) -> usize {
    population
        .iter()
        .position(|p| p.node_id == node_id)
        .expect("selection returns ids from the population")
}
