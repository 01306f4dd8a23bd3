//! Deterministic discrete-event simulation of the group.
//!
//! One run owns a single seeded generator and an event queue ordered by
//! `(time, insertion index)`, so a scenario plus its seed fully determines
//! every trace byte. Time is integer microseconds. The engine builds the
//! radio graph and spanning tree centrally, drives HELLO beaconing,
//! handshakes, data forwarding with per-hop latency and Bernoulli channel
//! drops, and re-keys the affected nodes on every join or leave. Departed
//! nodes are frozen, not erased, so tests can interrogate the key material
//! they retained.
//!
//! HELLO beacons are processed by every radio neighbor at the instant they
//! are sent; unicast traffic (data packets and key updates) is delayed by
//! `latency_per_unit x distance`. Channel drops apply to data packets
//! only: the throughput metrics concern data traffic, and key updates
//! already face churn races worth observing without an extra loss knob.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::crypto::{generate_neighborhood_key, rsa_keygen, MacAddress};
use crate::protocol::{
    apply_key_update, encrypt_at_source, handle_hello, handle_packet, handshake,
    rekey_on_membership_change, route_discover, DropReason, HandleOutcome, HelloMessage,
    KeyUpdateMessage, KeyUpdateOutcome, NodeState, Packet, ProtocolError,
};
use crate::topology::{
    build_mst, build_radio_graph, connected_components, euclidean_distance, tree_path, NodeId,
    Position, RadioGraph, SpanningTree, TopologyError,
};

/// Simulation time in integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_micros(micros: u64) -> Self {
        SimTime(micros)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identity and placement of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub position: Position,
    pub mac: MacAddress,
}

/// Everything that defines a run. Identical scenarios produce identical
/// traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub range: f64,
    pub hello_interval: SimTime,
    pub latency_per_unit: SimTime,
    pub drop_prob: f64,
    pub nodes: Vec<NodeSpec>,
    pub script: Vec<ScriptAction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptAction {
    pub at: SimTime,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send {
        src: NodeId,
        dest: NodeId,
        payload: Vec<u8>,
    },
    Join(NodeSpec),
    Leave(NodeId),
    Route {
        origin: NodeId,
        target: NodeId,
    },
}

impl Scenario {
    /// Structural validation; run once before simulating.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.range <= 0.0 || !self.range.is_finite() {
            return Err(SimError::InvalidScenario(format!(
                "range must be positive and finite, got {}",
                self.range
            )));
        }
        if self.hello_interval == SimTime::ZERO {
            return Err(SimError::InvalidScenario(
                "hello_interval must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(SimError::InvalidScenario(format!(
                "drop_prob must lie in [0, 1], got {}",
                self.drop_prob
            )));
        }
        if self.nodes.is_empty() {
            return Err(SimError::InvalidScenario(
                "scenario declares no nodes".into(),
            ));
        }
        let mut ids = BTreeSet::new();
        let mut macs = BTreeSet::new();
        for spec in &self.nodes {
            if !spec.position.is_finite() {
                return Err(SimError::InvalidScenario(format!(
                    "node {} has a non-finite position",
                    spec.id
                )));
            }
            if !ids.insert(spec.id) {
                return Err(SimError::InvalidScenario(format!(
                    "duplicate node id {}",
                    spec.id
                )));
            }
            if !macs.insert(spec.mac) {
                return Err(SimError::InvalidScenario(format!(
                    "duplicate mac address {}",
                    spec.mac
                )));
            }
        }
        let mut known = ids;
        let mut last = SimTime::ZERO;
        for (i, entry) in self.script.iter().enumerate() {
            if entry.at < last {
                return Err(SimError::InvalidScenario(format!(
                    "script action {i} goes back in time"
                )));
            }
            last = entry.at;
            let check_known = |id: NodeId| {
                if known.contains(&id) {
                    Ok(())
                } else {
                    Err(SimError::InvalidScenario(format!(
                        "script action {i} references unknown node {id}"
                    )))
                }
            };
            match &entry.action {
                Action::Send { src, dest, .. } => {
                    check_known(*src)?;
                    check_known(*dest)?;
                }
                Action::Route { origin, target } => {
                    check_known(*origin)?;
                    check_known(*target)?;
                }
                Action::Leave(id) => check_known(*id)?,
                Action::Join(spec) => {
                    if !spec.position.is_finite() {
                        return Err(SimError::InvalidScenario(format!(
                            "join of {} has a non-finite position",
                            spec.id
                        )));
                    }
                    if !known.insert(spec.id) {
                        return Err(SimError::InvalidScenario(format!(
                            "join reuses node id {}",
                            spec.id
                        )));
                    }
                    if !macs.insert(spec.mac) {
                        return Err(SimError::InvalidScenario(format!(
                            "join reuses mac address {}",
                            spec.mac
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("join of {0} rejected: {1}")]
    JoinRejected(NodeId, ChurnRejection),
    #[error("leave of {0} rejected: {1}")]
    LeaveRejected(NodeId, ChurnRejection),
}

/// Why a join or leave was refused. Refusals are logged and the run
/// continues; the topology is left untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChurnRejection {
    DuplicateId,
    DuplicateMac,
    BadPosition,
    /// Joiner out of everyone's range, or leave would split the network.
    Partition,
    UnknownNode,
    LastNode,
}

impl fmt::Display for ChurnRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ChurnRejection::DuplicateId => "duplicate_id",
            ChurnRejection::DuplicateMac => "duplicate_mac",
            ChurnRejection::BadPosition => "bad_position",
            ChurnRejection::Partition => "partition",
            ChurnRejection::UnknownNode => "unknown_node",
            ChurnRejection::LastNode => "last_node",
        };
        f.write_str(s)
    }
}

/// Queued simulation work. Queue entries are keyed by
/// `(time, insertion index)`, so equal-time events run in insertion order.
#[derive(Debug, Clone)]
pub enum EventKind {
    Hello {
        node: NodeId,
        recurring: bool,
    },
    Send {
        src: NodeId,
        dest: NodeId,
        payload: Vec<u8>,
    },
    Deliver {
        to: NodeId,
        packet: Packet,
    },
    KeyUpdateDeliver {
        to: NodeId,
        msg: KeyUpdateMessage,
    },
    Join(NodeSpec),
    Leave(NodeId),
    RouteDiscover {
        origin: NodeId,
        target: NodeId,
    },
}

/// Packet-level drop accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropCause {
    Channel,
    KeyUnavailable,
    RouteMissing,
    NodeDead,
    NotAddressed,
}

impl fmt::Display for DropCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DropCause::Channel => "channel",
            DropCause::KeyUnavailable => "key_unavailable",
            DropCause::RouteMissing => "route_missing",
            DropCause::NodeDead => "node_dead",
            DropCause::NotAddressed => "not_addressed",
        };
        f.write_str(s)
    }
}

/// Raw traffic samples plus the windowing used for throughput reporting.
/// Packets count once per payload (at the source and at the destination),
/// not per hop.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub window: SimTime,
    pub sends: Vec<(SimTime, usize)>,
    pub recvs: Vec<(SimTime, usize)>,
    pub latencies: Vec<SimTime>,
    pub drops: BTreeMap<DropCause, u64>,
    pub end_time: SimTime,
}

/// One row of the throughput series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRow {
    pub window_start: SimTime,
    pub sent_pkts: u64,
    pub recv_pkts: u64,
    pub sent_bytes: u64,
    pub recv_bytes: u64,
}

impl Metrics {
    fn new(window: SimTime) -> Self {
        Self {
            window,
            sends: Vec::new(),
            recvs: Vec::new(),
            latencies: Vec::new(),
            drops: BTreeMap::new(),
            end_time: SimTime::ZERO,
        }
    }

    fn record_send(&mut self, at: SimTime, bytes: usize) {
        self.sends.push((at, bytes));
    }

    fn record_recv(&mut self, at: SimTime, bytes: usize) {
        self.recvs.push((at, bytes));
    }

    fn record_drop(&mut self, cause: DropCause) {
        *self.drops.entry(cause).or_insert(0) += 1;
    }

    pub fn sent_packets(&self) -> u64 {
        self.sends.len() as u64
    }

    pub fn received_packets(&self) -> u64 {
        self.recvs.len() as u64
    }

    pub fn dropped_packets(&self) -> u64 {
        self.drops.values().sum()
    }

    /// Per-window traffic counts from the first window through the window
    /// containing the last processed event.
    pub fn throughput_series(&self) -> Vec<WindowRow> {
        let w = self.window.0.max(1);
        let last_window = self.end_time.0 / w;
        let mut rows: Vec<WindowRow> = (0..=last_window)
            .map(|i| WindowRow {
                window_start: SimTime(i * w),
                sent_pkts: 0,
                recv_pkts: 0,
                sent_bytes: 0,
                recv_bytes: 0,
            })
            .collect();
        for &(t, bytes) in &self.sends {
            let row = &mut rows[(t.0 / w) as usize];
            row.sent_pkts += 1;
            row.sent_bytes += bytes as u64;
        }
        for &(t, bytes) in &self.recvs {
            let row = &mut rows[(t.0 / w) as usize];
            row.recv_pkts += 1;
            row.recv_bytes += bytes as u64;
        }
        rows
    }
}

/// Line-oriented run log: `time<TAB>kind<TAB>node<TAB>key=value ...`,
/// one event per line, details in a fixed order per kind.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceLog {
    lines: Vec<String>,
}

impl TraceLog {
    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn to_text(&self) -> String {
        let mut text = self.lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        text
    }

    fn push(&mut self, time: SimTime, kind: &str, node: &str, details: &str) {
        let details = if details.is_empty() { "-" } else { details };
        self.lines
            .push(format!("{time}\t{kind}\t{node}\t{details}"));
    }
}

/// A data transmission as heard on the air (the medium is open; every
/// transmission is observable).
#[derive(Debug, Clone, PartialEq)]
pub struct PacketCapture {
    pub time: SimTime,
    pub from: NodeId,
    pub packet: Packet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChurnKind {
    Join,
    Leave,
}

/// Outcome of one scripted join or leave.
#[derive(Debug, Clone, PartialEq)]
pub struct ChurnRecord {
    pub time: SimTime,
    pub kind: ChurnKind,
    pub node: NodeId,
    pub accepted: bool,
    /// Nodes that replaced their neighborhood key because their
    /// tree-neighbor set changed.
    pub rekeyed: Vec<NodeId>,
}

/// Everything a finished run exposes. `states` keeps departed nodes
/// frozen at the moment they left.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub metrics: Metrics,
    pub trace: TraceLog,
    pub states: BTreeMap<NodeId, NodeState>,
    pub alive: BTreeSet<NodeId>,
    pub captures: Vec<PacketCapture>,
    pub churn: Vec<ChurnRecord>,
    pub tree: SpanningTree,
}

/// Run a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<SimReport, SimError> {
    Ok(Sim::new(scenario)?.run_to_completion())
}

/// The engine itself. Most callers use [`run`]; the engine is public so
/// churn handling can be driven directly.
pub struct Sim {
    seed: u64,
    range: f64,
    hello_interval: SimTime,
    latency_per_unit: SimTime,
    drop_prob: f64,
    /// Last scripted time; recurring beacons stop after this.
    horizon: SimTime,
    time: SimTime,
    queue: BTreeMap<(SimTime, u64), EventKind>,
    next_index: u64,
    specs: BTreeMap<NodeId, NodeSpec>,
    alive: BTreeSet<NodeId>,
    states: BTreeMap<NodeId, NodeState>,
    radio: RadioGraph,
    tree: SpanningTree,
    rng: ChaCha8Rng,
    metrics: Metrics,
    trace: TraceLog,
    captures: Vec<PacketCapture>,
    churn: Vec<ChurnRecord>,
    send_times: BTreeMap<(NodeId, u32), SimTime>,
}

impl Sim {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let positions: Vec<(NodeId, Position)> =
            scenario.nodes.iter().map(|s| (s.id, s.position)).collect();
        let radio = build_radio_graph(&positions, scenario.range)?;
        let tree = build_mst(&radio)?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let mut states = BTreeMap::new();
        // key generation draws in declaration order
        for spec in &scenario.nodes {
            let rsa = rsa_keygen(&mut rng);
            let own_key = generate_neighborhood_key(spec.id, 0, scenario.seed);
            let mut state = NodeState::new(spec.id, spec.mac, rsa, own_key);
            state.neighbors = tree.neighbors(spec.id).unwrap().clone();
            states.insert(spec.id, state);
        }
        let horizon = scenario
            .script
            .last()
            .map(|a| a.at)
            .unwrap_or(SimTime::ZERO);
        let mut sim = Sim {
            seed: scenario.seed,
            range: scenario.range,
            hello_interval: scenario.hello_interval,
            latency_per_unit: scenario.latency_per_unit,
            drop_prob: scenario.drop_prob,
            horizon,
            time: SimTime::ZERO,
            queue: BTreeMap::new(),
            next_index: 0,
            specs: scenario.nodes.iter().map(|s| (s.id, s.clone())).collect(),
            alive: scenario.nodes.iter().map(|s| s.id).collect(),
            states,
            radio,
            tree,
            rng,
            metrics: Metrics::new(SimTime(1_000_000)),
            trace: TraceLog::default(),
            captures: Vec::new(),
            churn: Vec::new(),
            send_times: BTreeMap::new(),
        };
        sim.trace_tree();
        for spec in &scenario.nodes {
            sim.schedule(
                SimTime::ZERO,
                EventKind::Hello {
                    node: spec.id,
                    recurring: true,
                },
            );
        }
        for entry in &scenario.script {
            let kind = match entry.action.clone() {
                Action::Send { src, dest, payload } => EventKind::Send { src, dest, payload },
                Action::Join(spec) => EventKind::Join(spec),
                Action::Leave(id) => EventKind::Leave(id),
                Action::Route { origin, target } => EventKind::RouteDiscover { origin, target },
            };
            sim.schedule(entry.at, kind);
        }
        Ok(sim)
    }

    pub fn run_to_completion(mut self) -> SimReport {
        while let Some(((time, _), kind)) = self.queue.pop_first() {
            self.time = time;
            self.dispatch(kind);
        }
        self.metrics.end_time = self.time;
        SimReport {
            metrics: self.metrics,
            trace: self.trace,
            states: self.states,
            alive: self.alive,
            captures: self.captures,
            churn: self.churn,
            tree: self.tree,
        }
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::Hello { node, recurring } => self.on_hello(node, recurring),
            EventKind::Send { src, dest, payload } => self.on_send(src, dest, payload),
            EventKind::Deliver { to, packet } => self.on_deliver(to, packet),
            EventKind::KeyUpdateDeliver { to, msg } => self.on_key_update(to, msg),
            EventKind::Join(spec) => self.on_join(spec),
            EventKind::Leave(node) => self.on_leave(node),
            EventKind::RouteDiscover { origin, target } => self.on_route(origin, target),
        }
    }

    fn schedule(&mut self, at: SimTime, kind: EventKind) {
        self.queue.insert((at, self.next_index), kind);
        self.next_index += 1;
    }

    fn log(&mut self, kind: &str, node: &str, details: String) {
        self.trace.push(self.time, kind, node, &details);
    }

    fn position(&self, id: NodeId) -> Position {
        self.specs[&id].position
    }

    fn latency_between(&self, a: NodeId, b: NodeId) -> SimTime {
        let d = euclidean_distance(self.position(a), self.position(b))
            .expect("positions validated at scenario load");
        SimTime((self.latency_per_unit.0 as f64 * d).round() as u64)
    }

    fn trace_tree(&mut self) {
        let edges = if self.tree.edges().is_empty() {
            "-".to_string()
        } else {
            self.tree
                .edges()
                .iter()
                .map(|(a, b)| format!("{a}-{b}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let details = format!("edges={edges} weight={:.6}", self.tree.total_weight());
        self.log("tree", "-", details);
    }

    fn on_hello(&mut self, node: NodeId, recurring: bool) {
        if !self.alive.contains(&node) {
            return;
        }
        let msg = HelloMessage {
            sender: node,
            public_key: self.states[&node].rsa.public(),
            timestamp: self.time,
        };
        self.log(
            "hello",
            &node.to_string(),
            format!("n={} e={}", msg.public_key.n, msg.public_key.e),
        );
        let hearers: Vec<NodeId> = self
            .radio
            .neighbors_of(node)
            .map(|set| set.iter().copied().collect())
            .unwrap_or_default();
        for hearer in hearers {
            if !self.alive.contains(&hearer) {
                continue;
            }
            let wants_handshake = handle_hello(self.states.get_mut(&hearer).unwrap(), &msg);
            if !wants_handshake {
                continue;
            }
            match handshake(&self.states[&hearer], &self.states[&node]) {
                Ok((from_hearer, from_sender)) => {
                    self.log("handshake", &hearer.to_string(), format!("peer={node}"));
                    self.send_key_update(from_hearer);
                    self.send_key_update(from_sender);
                }
                Err(ProtocolError::HandshakeDeferred { .. }) => {
                    // The sender has never heard us; beacon back so the
                    // retry on its side can complete.
                    self.log(
                        "handshake_deferred",
                        &hearer.to_string(),
                        format!("peer={node}"),
                    );
                    self.schedule(
                        self.time,
                        EventKind::Hello {
                            node: hearer,
                            recurring: false,
                        },
                    );
                }
                Err(other) => {
                    self.log(
                        "handshake_error",
                        &hearer.to_string(),
                        format!("error={other}"),
                    );
                }
            }
        }
        if recurring {
            let next = self.time + self.hello_interval;
            if next <= self.horizon {
                self.schedule(
                    next,
                    EventKind::Hello {
                        node,
                        recurring: true,
                    },
                );
            }
        }
    }

    fn send_key_update(&mut self, msg: KeyUpdateMessage) {
        self.log(
            "keyupdate_send",
            &msg.owner.to_string(),
            format!("to={} version={}", msg.recipient, msg.version),
        );
        let latency = self.latency_between(msg.owner, msg.recipient);
        self.schedule(
            self.time + latency,
            EventKind::KeyUpdateDeliver {
                to: msg.recipient,
                msg,
            },
        );
    }

    fn on_key_update(&mut self, to: NodeId, msg: KeyUpdateMessage) {
        if !self.alive.contains(&to) {
            self.log(
                "keyupdate_drop",
                &to.to_string(),
                format!("from={} reason=node_dead", msg.owner),
            );
            return;
        }
        let detail = format!("from={} version={}", msg.owner, msg.version);
        match apply_key_update(self.states.get_mut(&to).unwrap(), &msg) {
            Ok(KeyUpdateOutcome::Stored) => self.log("keyupdate_recv", &to.to_string(), detail),
            Ok(KeyUpdateOutcome::IgnoredStale) => {
                self.log("keyupdate_stale", &to.to_string(), detail)
            }
            Ok(KeyUpdateOutcome::IgnoredNotNeighbor) => {
                self.log("keyupdate_ignored", &to.to_string(), detail)
            }
            Err(error) => self.log(
                "keyupdate_error",
                &to.to_string(),
                format!("from={} error={error}", msg.owner),
            ),
        }
    }

    fn on_send(&mut self, src: NodeId, dest: NodeId, payload: Vec<u8>) {
        let fail = |sim: &mut Sim, reason: &str| {
            sim.log(
                "send_failed",
                &src.to_string(),
                format!("dest={dest} reason={reason}"),
            );
        };
        if !self.alive.contains(&src) || !self.alive.contains(&dest) {
            fail(self, "node_dead");
            return;
        }
        if src == dest {
            fail(self, "loopback");
            return;
        }
        if !self.states[&src].routing.contains_key(&dest) {
            self.discover_route(src, dest);
        }
        let packet = match encrypt_at_source(self.states.get_mut(&src).unwrap(), dest, &payload) {
            Ok(packet) => packet,
            Err(ProtocolError::RouteMissing { .. }) => {
                fail(self, "route_missing");
                return;
            }
            Err(error) => {
                let reason = format!("error:{error}");
                fail(self, &reason);
                return;
            }
        };
        self.metrics.record_send(self.time, payload.len());
        self.send_times.insert((src, packet.header.seq), self.time);
        self.log(
            "send",
            &src.to_string(),
            format!(
                "dest={dest} seq={} bytes={} payload={}",
                packet.header.seq,
                payload.len(),
                hex_str(&payload)
            ),
        );
        self.transmit(src, packet);
    }

    fn transmit(&mut self, from: NodeId, packet: Packet) {
        self.captures.push(PacketCapture {
            time: self.time,
            from,
            packet: packet.clone(),
        });
        let h = packet.header;
        self.log(
            "xmit",
            &from.to_string(),
            format!(
                "to={} src={} dest={} seq={} wrap_owner={} wrap_version={} wrapped={} body={}",
                h.next_hop,
                h.src,
                h.dest,
                h.seq,
                h.wrap_owner,
                h.wrap_version,
                hex_str(&packet.wrapped_mkey),
                hex_str(&packet.body)
            ),
        );
        if !self.alive.contains(&h.next_hop) {
            self.drop_packet(h.next_hop, &packet, DropCause::NodeDead);
            return;
        }
        if self.drop_prob > 0.0 && self.rng.gen::<f64>() < self.drop_prob {
            self.drop_packet(h.next_hop, &packet, DropCause::Channel);
            return;
        }
        let latency = self.latency_between(from, h.next_hop);
        self.schedule(
            self.time + latency,
            EventKind::Deliver {
                to: h.next_hop,
                packet,
            },
        );
    }

    fn drop_packet(&mut self, at: NodeId, packet: &Packet, cause: DropCause) {
        self.log(
            "drop",
            &at.to_string(),
            format!(
                "reason={cause} src={} seq={}",
                packet.header.src, packet.header.seq
            ),
        );
        self.metrics.record_drop(cause);
    }

    fn on_deliver(&mut self, to: NodeId, packet: Packet) {
        if !self.alive.contains(&to) {
            self.drop_packet(to, &packet, DropCause::NodeDead);
            return;
        }
        match handle_packet(self.states.get_mut(&to).unwrap(), &packet) {
            HandleOutcome::Delivered(plaintext) => {
                self.metrics.record_recv(self.time, plaintext.len());
                if let Some(&sent_at) = self.send_times.get(&(packet.header.src, packet.header.seq))
                {
                    self.metrics.latencies.push(self.time - sent_at);
                }
                self.log(
                    "recv",
                    &to.to_string(),
                    format!(
                        "src={} seq={} bytes={} plaintext={}",
                        packet.header.src,
                        packet.header.seq,
                        plaintext.len(),
                        hex_str(&plaintext)
                    ),
                );
            }
            HandleOutcome::Forward(next) => self.transmit(to, next),
            HandleOutcome::Dropped(reason) => {
                let cause = match reason {
                    DropReason::NotAddressed => DropCause::NotAddressed,
                    DropReason::KeyUnavailable => DropCause::KeyUnavailable,
                    DropReason::RouteMissing => DropCause::RouteMissing,
                };
                self.drop_packet(to, &packet, cause);
            }
        }
    }

    fn discover_route(&mut self, origin: NodeId, target: NodeId) {
        match route_discover(&self.tree, origin, target, &mut self.states) {
            Ok(Some(discovery)) => {
                self.log(
                    "route_req",
                    &origin.to_string(),
                    format!(
                        "target={target} path={}",
                        path_str(&discovery.request.hop_trace)
                    ),
                );
                self.log(
                    "route_rep",
                    &target.to_string(),
                    format!(
                        "origin={origin} path={}",
                        path_str(&discovery.reply.hop_trace)
                    ),
                );
            }
            Ok(None) => {}
            Err(_) => {
                self.log(
                    "route_timeout",
                    &origin.to_string(),
                    format!("target={target}"),
                );
            }
        }
    }

    fn on_route(&mut self, origin: NodeId, target: NodeId) {
        if !self.alive.contains(&origin) || !self.alive.contains(&target) {
            self.log(
                "route_timeout",
                &origin.to_string(),
                format!("target={target}"),
            );
            return;
        }
        self.discover_route(origin, target);
    }

    fn on_join(&mut self, spec: NodeSpec) {
        match self.apply_join(&spec) {
            Ok(_) => {}
            Err(SimError::JoinRejected(id, reason)) => {
                self.log("join_rejected", &id.to_string(), format!("reason={reason}"));
                self.churn.push(ChurnRecord {
                    time: self.time,
                    kind: ChurnKind::Join,
                    node: id,
                    accepted: false,
                    rekeyed: Vec::new(),
                });
            }
            Err(other) => {
                self.log(
                    "join_rejected",
                    &spec.id.to_string(),
                    format!("reason={other}"),
                );
            }
        }
    }

    fn on_leave(&mut self, node: NodeId) {
        match self.apply_leave(node) {
            Ok(_) => {}
            Err(SimError::LeaveRejected(id, reason)) => {
                self.log(
                    "leave_rejected",
                    &id.to_string(),
                    format!("reason={reason}"),
                );
                self.churn.push(ChurnRecord {
                    time: self.time,
                    kind: ChurnKind::Leave,
                    node: id,
                    accepted: false,
                    rekeyed: Vec::new(),
                });
            }
            Err(other) => {
                self.log(
                    "leave_rejected",
                    &node.to_string(),
                    format!("reason={other}"),
                );
            }
        }
    }

    /// Admit a new node: recompute the overlay, re-key every preexisting
    /// node whose tree-neighbor set changed, and start the joiner's
    /// beaconing. Returns the re-keyed nodes.
    pub fn apply_join(&mut self, spec: &NodeSpec) -> Result<Vec<NodeId>, SimError> {
        if self.specs.contains_key(&spec.id) {
            return Err(SimError::JoinRejected(spec.id, ChurnRejection::DuplicateId));
        }
        if !spec.position.is_finite() {
            return Err(SimError::JoinRejected(spec.id, ChurnRejection::BadPosition));
        }
        if self.specs.values().any(|s| s.mac == spec.mac) {
            return Err(SimError::JoinRejected(
                spec.id,
                ChurnRejection::DuplicateMac,
            ));
        }
        let reachable = self
            .alive
            .iter()
            .any(|&a| euclidean_distance(self.position(a), spec.position).unwrap() <= self.range);
        if !reachable {
            return Err(SimError::JoinRejected(spec.id, ChurnRejection::Partition));
        }
        let rsa = rsa_keygen(&mut self.rng);
        let own_key = generate_neighborhood_key(spec.id, 0, self.seed);
        self.specs.insert(spec.id, spec.clone());
        self.alive.insert(spec.id);
        self.states
            .insert(spec.id, NodeState::new(spec.id, spec.mac, rsa, own_key));
        self.log(
            "join",
            &spec.id.to_string(),
            format!(
                "x={} y={} mac={}",
                spec.position.x, spec.position.y, spec.mac
            ),
        );
        let rekeyed = self.rebuild_after_churn(Some(spec.id));
        self.churn.push(ChurnRecord {
            time: self.time,
            kind: ChurnKind::Join,
            node: spec.id,
            accepted: true,
            rekeyed: rekeyed.clone(),
        });
        self.schedule(
            self.time,
            EventKind::Hello {
                node: spec.id,
                recurring: true,
            },
        );
        Ok(rekeyed)
    }

    /// Retire a node: freeze its state, recompute the overlay, re-key the
    /// nodes whose tree-neighbor set changed (purging the departed key).
    /// Returns the re-keyed nodes.
    pub fn apply_leave(&mut self, node: NodeId) -> Result<Vec<NodeId>, SimError> {
        if !self.alive.contains(&node) {
            return Err(SimError::LeaveRejected(node, ChurnRejection::UnknownNode));
        }
        let remaining: Vec<(NodeId, Position)> = self
            .alive
            .iter()
            .filter(|&&a| a != node)
            .map(|&a| (a, self.position(a)))
            .collect();
        if remaining.is_empty() {
            return Err(SimError::LeaveRejected(node, ChurnRejection::LastNode));
        }
        let graph = build_radio_graph(&remaining, self.range).expect("positions already validated");
        if connected_components(&graph).len() > 1 {
            return Err(SimError::LeaveRejected(node, ChurnRejection::Partition));
        }
        self.alive.remove(&node);
        self.log("leave", &node.to_string(), String::new());
        let rekeyed = self.rebuild_after_churn(None);
        self.churn.push(ChurnRecord {
            time: self.time,
            kind: ChurnKind::Leave,
            node,
            accepted: true,
            rekeyed: rekeyed.clone(),
        });
        Ok(rekeyed)
    }

    /// Recompute radio graph and tree over the live set, then re-key every
    /// preexisting live node whose tree adjacency changed. `fresh` marks a
    /// node that was just created and starts at key version 0 instead.
    fn rebuild_after_churn(&mut self, fresh: Option<NodeId>) -> Vec<NodeId> {
        let old_adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> = self
            .tree
            .nodes()
            .map(|n| (n, self.tree.neighbors(n).unwrap().clone()))
            .collect();
        let positions: Vec<(NodeId, Position)> = self
            .alive
            .iter()
            .map(|&id| (id, self.position(id)))
            .collect();
        self.radio =
            build_radio_graph(&positions, self.range).expect("positions already validated");
        self.tree =
            build_mst(&self.radio).expect("churn is rejected unless the group stays connected");
        self.trace_tree();

        let mut rekeyed = Vec::new();
        let live: Vec<NodeId> = self.alive.iter().copied().collect();
        for id in live {
            let new_neighbors = self.tree.neighbors(id).unwrap().clone();
            if Some(id) == fresh {
                self.states.get_mut(&id).unwrap().neighbors = new_neighbors;
                continue;
            }
            let changed = old_adjacency.get(&id) != Some(&new_neighbors);
            let state = self.states.get_mut(&id).unwrap();
            state.neighbors = new_neighbors;
            if changed {
                let seed = self.seed;
                let updates = rekey_on_membership_change(state, seed);
                let version = state.own_key.version;
                self.log(
                    "rekey",
                    &id.to_string(),
                    format!("version={version} updates={}", updates.len()),
                );
                for update in updates {
                    self.send_key_update(update);
                }
                rekeyed.push(id);
            }
        }
        self.invalidate_routes();
        rekeyed
    }

    /// Drop routing entries whose next hop no longer matches the tree,
    /// forcing rediscovery on the next send.
    fn invalidate_routes(&mut self) {
        let live: Vec<NodeId> = self.alive.iter().copied().collect();
        for id in live {
            let entries: Vec<(NodeId, NodeId)> = self.states[&id]
                .routing
                .iter()
                .map(|(&dest, &next)| (dest, next))
                .collect();
            for (dest, next) in entries {
                let keep = self.alive.contains(&dest)
                    && matches!(
                        tree_path(&self.tree, id, dest).as_deref(),
                        Ok([_, second, ..]) if *second == next
                    );
                if !keep {
                    self.states.get_mut(&id).unwrap().routing.remove(&dest);
                }
            }
        }
    }
}

/// Lowercase hex, no separators; empty input yields the empty string.
pub fn hex_str(bytes: &[u8]) -> String {
    use fmt::Write;
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

fn path_str(hops: &[NodeId]) -> String {
    hops.iter()
        .map(|h| h.to_string())
        .collect::<Vec<_>>()
        .join("-")
}
