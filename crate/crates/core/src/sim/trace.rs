//! Run traces, metrics rows, summaries, and their file encodings.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::Method;
use super::SimError;
use crate::scalar::Scalar;

/// Trace record kinds. `Eval` records carry the post-aggregation metric
/// evaluation; one follows every `Aggregate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    TrainDone,
    UploadArrive,
    Aggregate,
    Eval,
}

/// One line of the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TraceEvent<T: Scalar> {
    pub event_id: u64,
    pub time: f64,
    pub node: Option<u32>,
    pub kind: TraceKind,
    pub delta_norm: Option<T>,
    pub eps: Option<T>,
    pub tau: Option<u64>,
    pub accepted: Option<bool>,
}

/// Per-aggregation record of the weighting actually applied, with the
/// pre-weighted and final combined updates kept for trigger-bias estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WindowRecord<T: Scalar> {
    pub event_id: u64,
    pub node_ids: Vec<u32>,
    /// Normalized pre-weights (before minimum-weight protection).
    pub pre_weights: Vec<T>,
    /// Weights actually applied (after protection and renormalization).
    pub weights: Vec<T>,
    pub delta_norms: Vec<T>,
    /// Sum of pre-weighted deltas.
    pub combined_pre: Vec<T>,
    /// Sum of finally weighted deltas.
    pub combined_final: Vec<T>,
}

/// Append-only record of a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EventTrace<T: Scalar> {
    pub events: Vec<TraceEvent<T>>,
    /// Per-node accepted-upload counters.
    pub gamma: BTreeMap<u32, u64>,
    /// Per-node completed local-round counters.
    pub rounds: BTreeMap<u32, u64>,
    /// `(event_id of the eval record, global training loss)` per evaluation;
    /// the first entry is the pre-training baseline.
    pub loss_history: Vec<(u64, T)>,
    pub windows: Vec<WindowRecord<T>>,
}

impl<T: Scalar> Default for EventTrace<T> {
    fn default() -> Self {
        EventTrace {
            events: Vec::new(),
            gamma: BTreeMap::new(),
            rounds: BTreeMap::new(),
            loss_history: Vec::new(),
            windows: Vec::new(),
        }
    }
}

impl<T: Scalar> EventTrace<T> {
    pub fn new(node_ids: impl Iterator<Item = u32>) -> Self {
        let mut trace = EventTrace::default();
        for id in node_ids {
            trace.gamma.insert(id, 0);
            trace.rounds.insert(id, 0);
        }
        trace
    }

    pub fn next_event_id(&self) -> u64 {
        self.events.len() as u64
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        time: f64,
        node: Option<u32>,
        kind: TraceKind,
        delta_norm: Option<T>,
        eps: Option<T>,
        tau: Option<u64>,
        accepted: Option<bool>,
    ) -> u64 {
        let event_id = self.next_event_id();
        self.events.push(TraceEvent {
            event_id,
            time,
            node,
            kind,
            delta_norm,
            eps,
            tau,
            accepted,
        });
        event_id
    }

    pub fn bump_gamma(&mut self, node: u32) {
        *self.gamma.entry(node).or_insert(0) += 1;
    }

    pub fn bump_round(&mut self, node: u32) {
        *self.rounds.entry(node).or_insert(0) += 1;
    }

    pub fn total_uploads(&self) -> u64 {
        self.gamma.values().sum()
    }

    /// One JSON object per line, in event order.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev).map_err(|e| SimError::Io(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| SimError::Io(e.to_string()))?;
        }
        Ok(())
    }
}

/// One evaluation row of the metrics series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MetricsRow<T: Scalar> {
    pub event_id: u64,
    pub sim_time: f64,
    pub mae: T,
    pub rmse: T,
    pub r2: T,
    pub global_loss: T,
}

/// Write metrics rows as CSV with the run's method in each row.
pub fn write_metrics_csv<T: Scalar, W: Write>(
    rows: &[MetricsRow<T>],
    method: Method,
    mut w: W,
) -> Result<(), SimError> {
    let io = |e: std::io::Error| SimError::Io(e.to_string());
    writeln!(w, "event_id,sim_time,method,mae,rmse,r2,global_loss").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.event_id, r.sim_time, method, r.mae, r.rmse, r.r2, r.global_loss
        )
        .map_err(io)?;
    }
    Ok(())
}

/// End-of-run summary, written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub final_mae: f64,
    pub final_rmse: f64,
    pub final_r2: f64,
    pub total_uploads: u64,
    pub per_node_gamma: BTreeMap<u32, u64>,
    pub tau_max: u64,
    /// Trigger-bias estimate; absent for protocols without pre-weighted
    /// aggregation.
    pub zeta_hat: Option<f64>,
    pub wall_events: u64,
    pub aggregations: u64,
    pub selected_nodes: Vec<u32>,
    pub selection_fallback: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_has_expected_fields() {
        let mut trace: EventTrace<f64> = EventTrace::new([1u32].into_iter());
        trace.push(
            0.5,
            Some(1),
            TraceKind::TrainDone,
            Some(0.25),
            Some(0.01),
            None,
            Some(true),
        );
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["event_id"], 0);
        assert_eq!(v["time"], 0.5);
        assert_eq!(v["node"], 1);
        assert_eq!(v["kind"], "train_done");
        assert_eq!(v["delta_norm"], 0.25);
        assert_eq!(v["eps"], 0.01);
        assert_eq!(v["tau"], serde_json::Value::Null);
        assert_eq!(v["accepted"], true);
    }

    #[test]
    fn metrics_csv_header_and_rows() {
        let rows = vec![MetricsRow {
            event_id: 3,
            sim_time: 1.5,
            mae: 0.1f64,
            rmse: 0.2,
            r2: 0.9,
            global_loss: 0.05,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, Method::Ssafl, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "event_id,sim_time,method,mae,rmse,r2,global_loss\n3,1.5,SSAFL,0.1,0.2,0.9,0.05\n"
        );
    }
}
