//! Metrics CSV and run summaries.

use std::fmt::Write;

use treekey_core::sim::{Metrics, SimReport};

/// Throughput CSV: one row per window from zero through the window that
/// contains the last event. `window_start` is in microseconds.
pub fn emit_metrics_csv(metrics: &Metrics) -> String {
    let mut out = String::from("window_start,sent_pkts,recv_pkts,sent_bytes,recv_bytes\n");
    for row in metrics.throughput_series() {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.window_start.as_micros(),
            row.sent_pkts,
            row.recv_pkts,
            row.sent_bytes,
            row.recv_bytes
        )
        .unwrap();
    }
    out
}

/// Human summary printed after a run.
pub fn summary(report: &SimReport) -> String {
    format!(
        "nodes: {}\ntree edges: {}\nsends: {}\ndeliveries: {}\ndrops: {}\n",
        report.alive.len(),
        report.tree.edges().len(),
        report.metrics.sent_packets(),
        report.metrics.received_packets(),
        report.metrics.dropped_packets(),
    )
}
