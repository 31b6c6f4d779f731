//! Intent and strategy data model.
//!
//! A strategy is the executable form of a network intent: who asked for it,
//! which goals it must meet, which entities it touches, what actions it
//! performs, and when it applies. Goals are `metric ▷ threshold` triples and
//! are the unit every similarity and satisfaction computation works on.

mod dsl;

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use dsl::parse_strategy;

/// Errors from parsing, validating, or evaluating strategies.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntentError {
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("semantic error: {0}")]
    Semantic(String),
    #[error("no telemetry reading for metric '{0}'")]
    MissingMetric(String),
    #[error("no telemetry samples in the deployment window")]
    EmptyWindow,
    #[error("telemetry sample at t={0} lies outside the strategy window")]
    OutOfWindow(String),
    #[error("telemetry file: {0}")]
    Telemetry(String),
}

/// Relational operator of a goal condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationalOp {
    Lt,
    Gt,
    Leq,
    Geq,
}

impl RelationalOp {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationalOp::Lt => "<",
            RelationalOp::Gt => ">",
            RelationalOp::Leq => "<=",
            RelationalOp::Geq => ">=",
        }
    }

    /// Evaluate `measured ▷ threshold`.
    pub fn holds<T: Scalar>(self, measured: T, threshold: T) -> bool {
        match self {
            RelationalOp::Lt => measured < threshold,
            RelationalOp::Gt => measured > threshold,
            RelationalOp::Leq => measured <= threshold,
            RelationalOp::Geq => measured >= threshold,
        }
    }
}

impl fmt::Display for RelationalOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationalOp {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "<" => Ok(RelationalOp::Lt),
            ">" => Ok(RelationalOp::Gt),
            "<=" => Ok(RelationalOp::Leq),
            ">=" => Ok(RelationalOp::Geq),
            _ => Err(()),
        }
    }
}

impl Serialize for RelationalOp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RelationalOp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|_| serde::de::Error::custom(format!("unknown relational operator '{s}'")))
    }
}

/// One goal condition: `metric ▷ threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Goal<T: Scalar> {
    pub metric: String,
    pub op: RelationalOp,
    pub threshold: T,
}

impl<T: Scalar> Goal<T> {
    pub fn new(metric: impl Into<String>, op: RelationalOp, threshold: T) -> Self {
        Goal {
            metric: metric.into(),
            op,
            threshold,
        }
    }
}

/// A concrete operational step with named scalar parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ActionItem<T: Scalar> {
    pub kind: String,
    #[serde(with = "ordered_params")]
    pub params: Vec<(String, T)>,
}

impl<T: Scalar> ActionItem<T> {
    pub fn new(kind: impl Into<String>) -> Self {
        ActionItem {
            kind: kind.into(),
            params: Vec::new(),
        }
    }

    pub fn with_param(mut self, key: impl Into<String>, value: T) -> Self {
        self.params.push((key.into(), value));
        self
    }
}

/// Serializes action params as a JSON object while keeping declaration order
/// in memory.
mod ordered_params {
    use super::Scalar;
    use serde::de::{MapAccess, Visitor};
    use serde::ser::SerializeMap;
    use std::fmt;
    use std::marker::PhantomData;

    pub fn serialize<T, S>(params: &[(String, T)], s: S) -> Result<S::Ok, S::Error>
    where
        T: Scalar,
        S: serde::Serializer,
    {
        let mut map = s.serialize_map(Some(params.len()))?;
        for (k, v) in params {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Vec<(String, T)>, D::Error>
    where
        T: Scalar,
        D: serde::Deserializer<'de>,
    {
        struct V<T>(PhantomData<T>);

        impl<'de, T: Scalar> Visitor<'de> for V<T> {
            type Value = Vec<(String, T)>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of parameter name to scalar value")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = m.next_entry::<String, T>()? {
                    out.push((k, v));
                }
                Ok(out)
            }
        }

        d.deserialize_map(V(PhantomData))
    }
}

/// The period a strategy is expected to take effect, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TimeWindow<T: Scalar> {
    pub start: T,
    pub end: T,
}

impl<T: Scalar> TimeWindow<T> {
    pub fn new(start: T, end: T) -> Result<Self, IntentError> {
        if !(start < end) {
            return Err(IntentError::Semantic(format!(
                "window start ({start}) must be strictly before end ({end})"
            )));
        }
        if start < T::zero() {
            return Err(IntentError::Semantic(format!(
                "window start ({start}) must be non-negative"
            )));
        }
        Ok(TimeWindow { start, end })
    }

    pub fn contains(&self, t: T) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Executable strategy tuple: user, goals, entities, actions, time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StrategyTuple<T: Scalar> {
    pub user: String,
    pub goals: Vec<Goal<T>>,
    pub entities: Vec<String>,
    pub actions: Vec<ActionItem<T>>,
    pub window: TimeWindow<T>,
}

impl<T: Scalar> StrategyTuple<T> {
    /// Check the structural invariants of an executable strategy.
    pub fn validate(&self) -> Result<(), IntentError> {
        if self.goals.is_empty() {
            return Err(IntentError::Semantic("empty goal set".into()));
        }
        if self.entities.is_empty() {
            return Err(IntentError::Semantic("empty entity set".into()));
        }
        if self.actions.is_empty() {
            return Err(IntentError::Semantic("empty action set".into()));
        }
        let mut metrics = BTreeSet::new();
        for g in &self.goals {
            if !is_metric_name(&g.metric) {
                return Err(IntentError::Semantic(format!(
                    "metric '{}' is not a lowercase identifier",
                    g.metric
                )));
            }
            if !g.threshold.is_finite() {
                return Err(IntentError::Semantic(format!(
                    "threshold for metric '{}' is not finite",
                    g.metric
                )));
            }
            if !metrics.insert(g.metric.as_str()) {
                return Err(IntentError::Semantic(format!(
                    "duplicate metric '{}'",
                    g.metric
                )));
            }
        }
        for a in &self.actions {
            let mut keys = BTreeSet::new();
            for (k, _) in &a.params {
                if !keys.insert(k.as_str()) {
                    return Err(IntentError::Semantic(format!(
                        "duplicate parameter '{k}' in action '{}'",
                        a.kind
                    )));
                }
            }
        }
        TimeWindow::new(self.window.start, self.window.end)?;
        Ok(())
    }

    /// The set of action kinds, the discrete universe action similarity
    /// works over.
    pub fn action_kinds(&self) -> BTreeSet<&str> {
        self.actions.iter().map(|a| a.kind.as_str()).collect()
    }

    /// Render back into the strategy DSL. `parse_strategy` of the output
    /// reproduces the tuple.
    pub fn to_dsl(&self) -> String {
        let mut out = format!("user={}", self.user);
        for g in &self.goals {
            out.push_str(&format!("; goal {} {} {}", g.metric, g.op, g.threshold));
        }
        for e in &self.entities {
            out.push_str(&format!("; entity {e}"));
        }
        for a in &self.actions {
            let params = a
                .params
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(", ");
            out.push_str(&format!("; action {}({params})", a.kind));
        }
        out.push_str(&format!(
            "; window {} {}",
            self.window.start, self.window.end
        ));
        out
    }
}

pub(crate) fn is_metric_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// One timestamped set of metric readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TelemetrySample<T: Scalar> {
    pub time: T,
    pub readings: Vec<(String, T)>,
}

impl<T: Scalar> TelemetrySample<T> {
    pub fn reading(&self, metric: &str) -> Option<T> {
        self.readings
            .iter()
            .find(|(m, _)| m == metric)
            .map(|&(_, v)| v)
    }
}

/// Outcome of comparing empirical satisfaction against the reliability
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// Satisfaction meets the threshold; the deployment stands.
    Stable,
    /// Satisfaction fell below the threshold; re-verify through federated
    /// evaluation.
    ReVerify,
}

/// Satisfaction indicator of one goal against one measured value.
pub fn goal_satisfied<T: Scalar>(g: &Goal<T>, measured: T) -> bool {
    g.op.holds(measured, g.threshold)
}

/// Whether every goal of `s` is satisfied by `sample` (the product of
/// per-goal indicators).
pub fn strategy_satisfied<T: Scalar>(
    s: &StrategyTuple<T>,
    sample: &TelemetrySample<T>,
) -> Result<bool, IntentError> {
    let mut all = true;
    for g in &s.goals {
        let measured = sample
            .reading(&g.metric)
            .ok_or_else(|| IntentError::MissingMetric(g.metric.clone()))?;
        all &= goal_satisfied(g, measured);
    }
    Ok(all)
}

/// Fraction of samples with every goal satisfied.
pub fn empirical_satisfaction<T: Scalar>(
    s: &StrategyTuple<T>,
    samples: &[TelemetrySample<T>],
) -> Result<T, IntentError> {
    if samples.is_empty() {
        return Err(IntentError::EmptyWindow);
    }
    let mut hits = 0usize;
    for sample in samples {
        if !s.window.contains(sample.time) {
            return Err(IntentError::OutOfWindow(format!("{}", sample.time)));
        }
        if strategy_satisfied(s, sample)? {
            hits += 1;
        }
    }
    Ok(T::from_usize(hits).unwrap() / T::from_usize(samples.len()).unwrap())
}

/// Re-verify when empirical satisfaction falls strictly below the
/// reliability threshold.
pub fn reliability_verdict<T: Scalar>(p_s: T, p_min: T) -> Verdict {
    if p_s < p_min {
        Verdict::ReVerify
    } else {
        Verdict::Stable
    }
}

/// Read telemetry from CSV with header `time,<metric1>,<metric2>,...`.
pub fn read_telemetry_csv<T: Scalar, R: Read>(
    reader: R,
) -> Result<Vec<TelemetrySample<T>>, IntentError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IntentError::Telemetry(e.to_string()))?
        .clone();
    if headers.get(0) != Some("time") {
        return Err(IntentError::Telemetry(
            "first column must be 'time'".into(),
        ));
    }
    let metrics: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IntentError::Telemetry(e.to_string()))?;
        let parse = |idx: usize| -> Result<T, IntentError> {
            let raw = record
                .get(idx)
                .ok_or_else(|| IntentError::Telemetry(format!("row too short at column {idx}")))?;
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| IntentError::Telemetry(format!("bad number '{raw}'")))?;
            Ok(T::from_f64_lossy(v))
        };
        let time = parse(0)?;
        let readings = metrics
            .iter()
            .enumerate()
            .map(|(i, m)| Ok((m.clone(), parse(i + 1)?)))
            .collect::<Result<Vec<_>, IntentError>>()?;
        out.push(TelemetrySample { time, readings });
    }
    Ok(out)
}

/// Write telemetry as CSV with header `time,<metric1>,<metric2>,...`.
/// Columns follow the reading order of the first sample.
pub fn write_telemetry_csv<T: Scalar, W: Write>(
    samples: &[TelemetrySample<T>],
    writer: W,
) -> Result<(), IntentError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let metrics: Vec<&str> = match samples.first() {
        Some(s) => s.readings.iter().map(|(m, _)| m.as_str()).collect(),
        None => Vec::new(),
    };
    let mut header = vec!["time".to_owned()];
    header.extend(metrics.iter().map(|m| (*m).to_owned()));
    wtr.write_record(&header)
        .map_err(|e| IntentError::Telemetry(e.to_string()))?;
    for s in samples {
        let mut row = vec![format!("{}", s.time)];
        for m in &metrics {
            let v = s
                .reading(m)
                .ok_or_else(|| IntentError::MissingMetric((*m).to_owned()))?;
            row.push(format!("{v}"));
        }
        wtr.write_record(&row)
            .map_err(|e| IntentError::Telemetry(e.to_string()))?;
    }
    wtr.flush().map_err(|e| IntentError::Telemetry(e.to_string()))
}
