//! Run metrics with deterministic CSV and JSON-lines renderings.

use std::collections::BTreeMap;

use crate::broadcast::MessageId;
use crate::runtime::Millis;
use crate::wire::MessageKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Metrics {
    pub events_processed: u64,
    pub per_kind: BTreeMap<&'static str, KindCounters>,
    pub link_bytes: BTreeMap<(usize, usize), u64>,
    /// Encoded key + state bytes shipped by replication, per key name.
    pub store_bytes: BTreeMap<String, u64>,
    pub broadcast_origin_at: BTreeMap<MessageId, Millis>,
    pub broadcast_latencies: Vec<Millis>,
    pub task_executions: BTreeMap<String, u64>,
    pub means_flushed: BTreeMap<String, u64>,
    pub decode_errors: u64,
    pub converged_at: Vec<Millis>,
    pub final_converged: Option<bool>,
}

impl Metrics {
    pub fn kind(&mut self, kind: MessageKind) -> &mut KindCounters {
        self.per_kind.entry(kind.name()).or_default()
    }

    pub fn sent(&mut self, kind: MessageKind, from: usize, to: usize, bytes: usize) {
        let c = self.kind(kind);
        c.sent += 1;
        c.bytes += bytes as u64;
        *self.link_bytes.entry((from, to)).or_default() += bytes as u64;
    }

    pub fn bytes_of(&self, kinds: &[MessageKind]) -> u64 {
        kinds
            .iter()
            .filter_map(|k| self.per_kind.get(k.name()))
            .map(|c| c.bytes)
            .sum()
    }

    /// Replication bytes attributed to keys accepted by `keep`.
    pub fn store_bytes_where(&self, keep: impl Fn(&str) -> bool) -> u64 {
        self.store_bytes
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(_, b)| b)
            .sum()
    }

    /// `(metric, label, value)` rows in a stable order.
    pub fn rows(&self) -> Vec<(String, String, String)> {
        let mut rows = Vec::new();
        let mut push = |m: &str, l: String, v: String| rows.push((m.to_string(), l, v));
        push("events_processed", String::new(), self.events_processed.to_string());
        for (kind, c) in &self.per_kind {
            push("msg_sent", kind.to_string(), c.sent.to_string());
            push("msg_delivered", kind.to_string(), c.delivered.to_string());
            push("msg_dropped", kind.to_string(), c.dropped.to_string());
            push("bytes_sent", kind.to_string(), c.bytes.to_string());
        }
        for ((a, b), bytes) in &self.link_bytes {
            push("link_bytes", format!("{a}->{b}"), bytes.to_string());
        }
        for (key, bytes) in &self.store_bytes {
            push("store_bytes", key.clone(), bytes.to_string());
        }
        push("broadcasts", String::new(), self.broadcast_origin_at.len().to_string());
        push(
            "broadcast_deliveries",
            String::new(),
            self.broadcast_latencies.len().to_string(),
        );
        if !self.broadcast_latencies.is_empty() {
            let max = self.broadcast_latencies.iter().max().copied().unwrap_or(0);
            let sum: u64 = self.broadcast_latencies.iter().sum();
            push("broadcast_latency_max_ms", String::new(), max.to_string());
            push(
                "broadcast_latency_mean_ms",
                String::new(),
                (sum as f64 / self.broadcast_latencies.len() as f64).to_string(),
            );
        }
        for (task, n) in &self.task_executions {
            push("task_executions", task.clone(), n.to_string());
        }
        for (task, n) in &self.means_flushed {
            push("means_flushed", task.clone(), n.to_string());
        }
        push("decode_errors", String::new(), self.decode_errors.to_string());
        for (i, t) in self.converged_at.iter().enumerate() {
            push("converged_at_ms", i.to_string(), t.to_string());
        }
        if let Some(c) = self.final_converged {
            push("final_converged", String::new(), u8::from(c).to_string());
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,label,value\n");
        for (m, l, v) in self.rows() {
            s.push_str(&format!("{m},{l},{v}\n"));
        }
        s
    }

    pub fn to_jsonl(&self) -> String {
        self.rows()
            .into_iter()
            .map(|(m, l, v)| {
                let value: serde_json::Value = serde_json::from_str(&v).unwrap_or(serde_json::Value::String(v));
                serde_json::json!({ "metric": m, "label": l, "value": value }).to_string() + "\n"
            })
            .collect()
    }
}
