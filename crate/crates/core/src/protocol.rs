//! Per-node protocol state machine.
//!
//! A packet carries two encryption layers: the body, encrypted once at
//! the source under a message-specific key, and that message key wrapped
//! under the neighborhood key of whichever node transmitted last. Each
//! forwarding hop unwraps the message key with the previous hop's
//! neighborhood key and re-wraps it under its own; the body is never
//! touched in flight. Neighborhood keys themselves travel in RSA-wrapped
//! key-update messages exchanged between tree neighbors after a
//! HELLO-driven handshake, and are replaced (version + 1) whenever a
//! node's tree-neighbor set changes.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::crypto::{
    cipher_a_decrypt, cipher_a_encrypt, cipher_b_decrypt, cipher_b_encrypt, derive_message_key,
    generate_neighborhood_key, rsa_unwrap, rsa_wrap, CryptoError, MacAddress, NeighborhoodKey,
    RsaKeyPair, RsaPublicKey,
};
use crate::sim::SimTime;
use crate::topology::{tree_path, NodeId, SpanningTree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("{node} has no route to {dest}")]
    RouteMissing { node: NodeId, dest: NodeId },
    #[error("refusing to send to self")]
    Loopback,
    #[error("handshake deferred: {node} has no public key for {missing}")]
    HandshakeDeferred { node: NodeId, missing: NodeId },
    #[error("route discovery from {origin} to {target} timed out")]
    DiscoveryTimeout { origin: NodeId, target: NodeId },
    #[error("packet truncated at {0} bytes")]
    TruncatedPacket(usize),
    #[error("key update for {expected} handled by {actual}")]
    WrongRecipient { expected: NodeId, actual: NodeId },
    #[error("unwrapped neighborhood key has the wrong length")]
    BadKeyLength,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Packet header. `next_hop` is the per-hop address appended by the
/// transmitter; `dest` is the final recipient. `wrap_owner`/`wrap_version`
/// name the neighborhood key currently wrapping the message key: the
/// source at origin, the previous hop thereafter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketHeader {
    pub src: NodeId,
    pub next_hop: NodeId,
    pub dest: NodeId,
    pub seq: u32,
    pub wrap_owner: NodeId,
    pub wrap_version: u32,
}

/// Wire unit: header, wrapped message key, body. The body is created once
/// at the source and is bit-identical end to end; only the header's hop
/// fields and the wrapper change per hop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub header: PacketHeader,
    pub wrapped_mkey: [u8; 10],
    pub body: Vec<u8>,
}

/// Canonical octet layout: six big-endian u32 header fields in the order
/// src, next_hop, dest, seq, wrap_owner, wrap_version; then the 10-octet
/// wrapped message key; then the body.
const PACKET_HEADER_LEN: usize = 24;
const PACKET_MIN_LEN: usize = PACKET_HEADER_LEN + 10;

impl Packet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(PACKET_MIN_LEN + self.body.len());
        for field in [
            h.src.0,
            h.next_hop.0,
            h.dest.0,
            h.seq,
            h.wrap_owner.0,
            h.wrap_version,
        ] {
            out.extend_from_slice(&field.to_be_bytes());
        }
        out.extend_from_slice(&self.wrapped_mkey);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() < PACKET_MIN_LEN {
            return Err(ProtocolError::TruncatedPacket(bytes.len()));
        }
        let field = |i: usize| u32::from_be_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap());
        let header = PacketHeader {
            src: NodeId(field(0)),
            next_hop: NodeId(field(1)),
            dest: NodeId(field(2)),
            seq: field(3),
            wrap_owner: NodeId(field(4)),
            wrap_version: field(5),
        };
        let wrapped_mkey = bytes[PACKET_HEADER_LEN..PACKET_MIN_LEN].try_into().unwrap();
        Ok(Packet {
            header,
            wrapped_mkey,
            body: bytes[PACKET_MIN_LEN..].to_vec(),
        })
    }
}

/// A neighborhood key in transit, wrapped octet-wise under the recipient's
/// RSA public key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyUpdateMessage {
    pub owner: NodeId,
    pub version: u32,
    pub recipient: NodeId,
    pub wrapped_key: Vec<u64>,
}

/// Periodic beacon advertising a node and its RSA public key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HelloMessage {
    pub sender: NodeId,
    pub public_key: RsaPublicKey,
    pub timestamp: SimTime,
}

/// Route request walking the tree from origin toward target, accumulating
/// the hop trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteRequest {
    pub origin: NodeId,
    pub target: NodeId,
    pub hop_trace: Vec<NodeId>,
}

/// Route reply retracing the request path in reverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteReply {
    pub origin: NodeId,
    pub target: NodeId,
    pub hop_trace: Vec<NodeId>,
}

/// The request/reply pair produced by one completed route discovery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteDiscovery {
    pub request: RouteRequest,
    pub reply: RouteReply,
}

/// A plaintext handed up at the destination, kept for test interrogation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveredMessage {
    pub src: NodeId,
    pub seq: u32,
    pub plaintext: Vec<u8>,
}

/// Everything one node knows: identity, key material, neighbor tables,
/// routing, and logs of handled packets and delivered plaintexts.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub mac: MacAddress,
    pub rsa: RsaKeyPair,
    pub own_key: NeighborhoodKey,
    /// Current tree-adjacent neighbors.
    pub neighbors: BTreeSet<NodeId>,
    /// Latest neighborhood key learned per authenticated neighbor.
    pub neighbor_keys: BTreeMap<NodeId, NeighborhoodKey>,
    /// Public keys heard in HELLOs, cached for any node in radio range.
    pub neighbor_pubkeys: BTreeMap<NodeId, RsaPublicKey>,
    /// Destination -> next hop along the tree.
    pub routing: BTreeMap<NodeId, NodeId>,
    pub seq_counter: u32,
    pub inbox: Vec<Packet>,
    pub delivered: Vec<DeliveredMessage>,
}

impl NodeState {
    pub fn new(id: NodeId, mac: MacAddress, rsa: RsaKeyPair, own_key: NeighborhoodKey) -> Self {
        Self {
            id,
            mac,
            rsa,
            own_key,
            neighbors: BTreeSet::new(),
            neighbor_keys: BTreeMap::new(),
            neighbor_pubkeys: BTreeMap::new(),
            routing: BTreeMap::new(),
            seq_counter: 0,
            inbox: Vec::new(),
            delivered: Vec::new(),
        }
    }
}

/// Result of handling one packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandleOutcome {
    Delivered(Vec<u8>),
    Forward(Packet),
    Dropped(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// Overheard but not addressed to this node.
    NotAddressed,
    /// No neighborhood key stored for the wrap owner at the wrap version.
    KeyUnavailable,
    /// No routing entry toward the destination.
    RouteMissing,
}

/// Result of applying a received key update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyUpdateOutcome {
    Stored,
    /// Sender is not currently a tree neighbor; key confinement forbids
    /// storing its key.
    IgnoredNotNeighbor,
    /// An equal or newer version is already stored.
    IgnoredStale,
}

/// Build a packet at the source: derive the message key from the source
/// MAC and sequence number, encrypt the body with cipher A, wrap the
/// message key with cipher B under the source's own neighborhood key.
pub fn encrypt_at_source(
    state: &mut NodeState,
    dest: NodeId,
    plaintext: &[u8],
) -> Result<Packet, ProtocolError> {
    if dest == state.id {
        return Err(ProtocolError::Loopback);
    }
    let &next_hop = state
        .routing
        .get(&dest)
        .ok_or(ProtocolError::RouteMissing {
            node: state.id,
            dest,
        })?;
    let seq = state.seq_counter;
    let mkey = derive_message_key(&state.mac, seq);
    let body = cipher_a_encrypt(&mkey.0, plaintext)?;
    let wrapped = cipher_b_encrypt(&state.own_key.bytes, &mkey.0)?;
    state.seq_counter += 1;
    Ok(Packet {
        header: PacketHeader {
            src: state.id,
            next_hop,
            dest,
            seq,
            wrap_owner: state.id,
            wrap_version: state.own_key.version,
        },
        wrapped_mkey: wrapped
            .try_into()
            .expect("wrapper preserves the 10-octet length"),
        body,
    })
}

/// Process a packet heard on the air. Nodes other than `next_hop` drop it;
/// the destination unwraps and decrypts; intermediates unwrap, re-wrap
/// under their own key, and forward along their routing table.
pub fn handle_packet(state: &mut NodeState, pkt: &Packet) -> HandleOutcome {
    state.inbox.push(pkt.clone());
    let h = pkt.header;
    if h.next_hop != state.id {
        return HandleOutcome::Dropped(DropReason::NotAddressed);
    }
    let wrap_key = match state.neighbor_keys.get(&h.wrap_owner) {
        Some(k) if k.version == h.wrap_version => *k,
        _ => return HandleOutcome::Dropped(DropReason::KeyUnavailable),
    };
    let mkey =
        cipher_b_decrypt(&wrap_key.bytes, &pkt.wrapped_mkey).expect("stored keys are never empty");
    if h.dest == state.id {
        let plaintext = cipher_a_decrypt(&mkey, &pkt.body).expect("message keys are never empty");
        state.delivered.push(DeliveredMessage {
            src: h.src,
            seq: h.seq,
            plaintext: plaintext.clone(),
        });
        return HandleOutcome::Delivered(plaintext);
    }
    let Some(&next_hop) = state.routing.get(&h.dest) else {
        return HandleOutcome::Dropped(DropReason::RouteMissing);
    };
    let rewrapped = cipher_b_encrypt(&state.own_key.bytes, &mkey).expect("own key is never empty");
    HandleOutcome::Forward(Packet {
        header: PacketHeader {
            next_hop,
            wrap_owner: state.id,
            wrap_version: state.own_key.version,
            ..h
        },
        wrapped_mkey: rewrapped
            .try_into()
            .expect("wrapper preserves the 10-octet length"),
        body: pkt.body.clone(),
    })
}

/// Construct the key-update pair for a neighbor handshake: each side wraps
/// its current neighborhood key under the other's RSA public key. Both
/// public keys must already have been heard in HELLOs; the messages take
/// effect when each recipient applies them.
pub fn handshake(
    a: &NodeState,
    b: &NodeState,
) -> Result<(KeyUpdateMessage, KeyUpdateMessage), ProtocolError> {
    let pk_b = a
        .neighbor_pubkeys
        .get(&b.id)
        .ok_or(ProtocolError::HandshakeDeferred {
            node: a.id,
            missing: b.id,
        })?;
    let pk_a = b
        .neighbor_pubkeys
        .get(&a.id)
        .ok_or(ProtocolError::HandshakeDeferred {
            node: b.id,
            missing: a.id,
        })?;
    Ok((
        KeyUpdateMessage {
            owner: a.id,
            version: a.own_key.version,
            recipient: b.id,
            wrapped_key: rsa_wrap(pk_b, &a.own_key.bytes),
        },
        KeyUpdateMessage {
            owner: b.id,
            version: b.own_key.version,
            recipient: a.id,
            wrapped_key: rsa_wrap(pk_a, &b.own_key.bytes),
        },
    ))
}

/// Unwrap a received key update with the node's private key and store the
/// sender's neighborhood key. Updates from non-neighbors and versions not
/// newer than the stored one are ignored.
pub fn apply_key_update(
    state: &mut NodeState,
    msg: &KeyUpdateMessage,
) -> Result<KeyUpdateOutcome, ProtocolError> {
    if msg.recipient != state.id {
        return Err(ProtocolError::WrongRecipient {
            expected: msg.recipient,
            actual: state.id,
        });
    }
    if !state.neighbors.contains(&msg.owner) {
        return Ok(KeyUpdateOutcome::IgnoredNotNeighbor);
    }
    if let Some(existing) = state.neighbor_keys.get(&msg.owner) {
        if existing.version >= msg.version {
            return Ok(KeyUpdateOutcome::IgnoredStale);
        }
    }
    let bytes = rsa_unwrap(&state.rsa, &msg.wrapped_key)?;
    let bytes: [u8; 16] = bytes.try_into().map_err(|_| ProtocolError::BadKeyLength)?;
    state.neighbor_keys.insert(
        msg.owner,
        NeighborhoodKey {
            owner: msg.owner,
            version: msg.version,
            bytes,
        },
    );
    Ok(KeyUpdateOutcome::Stored)
}

/// Record the sender's public key from a HELLO. Returns true when this
/// node should initiate a handshake: the sender is a tree neighbor whose
/// neighborhood key we do not yet hold.
pub fn handle_hello(state: &mut NodeState, msg: &HelloMessage) -> bool {
    state.neighbor_pubkeys.insert(msg.sender, msg.public_key);
    state.neighbors.contains(&msg.sender) && !state.neighbor_keys.contains_key(&msg.sender)
}

/// Walk the tree path from origin to target, installing next-hop entries
/// toward both endpoints on every node along the way. Returns `None` when
/// origin equals target (nothing to discover).
pub fn route_discover(
    tree: &SpanningTree,
    origin: NodeId,
    target: NodeId,
    states: &mut BTreeMap<NodeId, NodeState>,
) -> Result<Option<RouteDiscovery>, ProtocolError> {
    if origin == target {
        return Ok(None);
    }
    let path = tree_path(tree, origin, target)
        .map_err(|_| ProtocolError::DiscoveryTimeout { origin, target })?;
    for (i, &node) in path.iter().enumerate() {
        let state = states
            .get_mut(&node)
            .ok_or(ProtocolError::DiscoveryTimeout { origin, target })?;
        if i + 1 < path.len() {
            state.routing.insert(target, path[i + 1]);
        }
        if i > 0 {
            state.routing.insert(origin, path[i - 1]);
        }
    }
    let mut reversed = path.clone();
    reversed.reverse();
    Ok(Some(RouteDiscovery {
        request: RouteRequest {
            origin,
            target,
            hop_trace: path,
        },
        reply: RouteReply {
            origin,
            target,
            hop_trace: reversed,
        },
    }))
}

/// React to a change in the tree-neighbor set: replace the node's own key
/// with version + 1, purge keys of departed neighbors, and wrap the new
/// key for every current neighbor whose public key is known. The caller
/// must have updated `state.neighbors` first.
pub fn rekey_on_membership_change(
    state: &mut NodeState,
    scenario_seed: u64,
) -> Vec<KeyUpdateMessage> {
    state.own_key = generate_neighborhood_key(state.id, state.own_key.version + 1, scenario_seed);
    let NodeState {
        neighbor_keys,
        neighbors,
        ..
    } = state;
    neighbor_keys.retain(|id, _| neighbors.contains(id));
    state
        .neighbors
        .iter()
        .filter_map(|&nb| {
            state.neighbor_pubkeys.get(&nb).map(|pk| KeyUpdateMessage {
                owner: state.id,
                version: state.own_key.version,
                recipient: nb,
                wrapped_key: rsa_wrap(pk, &state.own_key.bytes),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::rsa_keygen;
    use crate::topology::{build_mst, build_radio_graph, Position};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SEED: u64 = 40;

    fn id(n: u32) -> NodeId {
        NodeId(n)
    }

    /// A line of `n` nodes with handshakes already applied: every adjacent
    /// pair holds the other's neighborhood key and public key.
    fn line_states(n: u32) -> BTreeMap<NodeId, NodeState> {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut states = BTreeMap::new();
        for i in 0..n {
            let mac = MacAddress([0, 0, 0, 0, 0, i as u8]);
            let state = NodeState::new(
                id(i),
                mac,
                rsa_keygen(&mut rng),
                generate_neighborhood_key(id(i), 0, SEED),
            );
            states.insert(id(i), state);
        }
        for i in 0..n {
            if i > 0 {
                states.get_mut(&id(i)).unwrap().neighbors.insert(id(i - 1));
            }
            if i + 1 < n {
                states.get_mut(&id(i)).unwrap().neighbors.insert(id(i + 1));
            }
        }
        for i in 0..n {
            let pk = states[&id(i)].rsa.public();
            let key = states[&id(i)].own_key;
            for j in 0..n {
                if j != i {
                    let other = states.get_mut(&id(j)).unwrap();
                    other.neighbor_pubkeys.insert(id(i), pk);
                    if other.neighbors.contains(&id(i)) {
                        other.neighbor_keys.insert(id(i), key);
                    }
                }
            }
        }
        states
    }

    fn line_tree(n: u32) -> crate::topology::SpanningTree {
        let nodes: Vec<_> = (0..n)
            .map(|i| (id(i), Position::new(i as f64, 0.0)))
            .collect();
        build_mst(&build_radio_graph(&nodes, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn source_packet_carries_dest_id_and_own_wrap() {
        let mut states = line_states(2);
        let tree = line_tree(2);
        route_discover(&tree, id(0), id(1), &mut states).unwrap();
        let a = states.get_mut(&id(0)).unwrap();
        let pkt = encrypt_at_source(a, id(1), b"hi").unwrap();
        assert_eq!(pkt.header.dest, id(1));
        assert_eq!(pkt.header.next_hop, id(1));
        assert_eq!(pkt.header.wrap_owner, id(0));
        assert_eq!(pkt.header.seq, 0);
        assert_eq!(a.seq_counter, 1);
    }

    #[test]
    fn source_packet_with_empty_plaintext() {
        let mut states = line_states(2);
        let tree = line_tree(2);
        route_discover(&tree, id(0), id(1), &mut states).unwrap();
        let pkt = encrypt_at_source(states.get_mut(&id(0)).unwrap(), id(1), b"").unwrap();
        assert!(pkt.body.is_empty());
        assert_eq!(pkt.wrapped_mkey.len(), 10);
    }

    #[test]
    fn source_body_decrypts_with_message_key() {
        let mut states = line_states(2);
        let tree = line_tree(2);
        route_discover(&tree, id(0), id(1), &mut states).unwrap();
        let a = states.get_mut(&id(0)).unwrap();
        let mac = a.mac;
        let pkt = encrypt_at_source(a, id(1), b"payload").unwrap();
        let mkey = derive_message_key(&mac, pkt.header.seq);
        assert_eq!(cipher_a_decrypt(&mkey.0, &pkt.body).unwrap(), b"payload");
    }

    #[test]
    fn source_errors() {
        let mut states = line_states(2);
        let a = states.get_mut(&id(0)).unwrap();
        assert_eq!(
            encrypt_at_source(a, id(0), b"x"),
            Err(ProtocolError::Loopback)
        );
        assert_eq!(
            encrypt_at_source(a, id(1), b"x"),
            Err(ProtocolError::RouteMissing {
                node: id(0),
                dest: id(1)
            })
        );
    }

    #[test]
    fn forward_rewraps_but_keeps_body() {
        let mut states = line_states(3);
        let tree = line_tree(3);
        route_discover(&tree, id(0), id(2), &mut states).unwrap();
        let pkt = encrypt_at_source(states.get_mut(&id(0)).unwrap(), id(2), b"msg").unwrap();
        let original_body = pkt.body.clone();

        let outcome = handle_packet(states.get_mut(&id(1)).unwrap(), &pkt);
        let HandleOutcome::Forward(fwd) = outcome else {
            panic!("expected forward, got {outcome:?}");
        };
        assert_eq!(fwd.header.wrap_owner, id(1));
        assert_eq!(fwd.header.next_hop, id(2));
        assert_eq!(fwd.header.src, id(0));
        assert_eq!(fwd.body, original_body);
        assert_ne!(fwd.wrapped_mkey, pkt.wrapped_mkey);

        let outcome = handle_packet(states.get_mut(&id(2)).unwrap(), &fwd);
        assert_eq!(outcome, HandleOutcome::Delivered(b"msg".to_vec()));
        assert_eq!(states[&id(2)].delivered[0].plaintext, b"msg");
    }

    #[test]
    fn bystander_drops_unaddressed_packet() {
        let mut states = line_states(3);
        let tree = line_tree(3);
        route_discover(&tree, id(0), id(1), &mut states).unwrap();
        let pkt = encrypt_at_source(states.get_mut(&id(0)).unwrap(), id(1), b"x").unwrap();
        let outcome = handle_packet(states.get_mut(&id(2)).unwrap(), &pkt);
        assert_eq!(outcome, HandleOutcome::Dropped(DropReason::NotAddressed));
        // overheard traffic still lands in the inbox log
        assert_eq!(states[&id(2)].inbox, vec![pkt]);
        assert!(states[&id(2)].delivered.is_empty());
    }

    #[test]
    fn missing_wrap_key_drops_packet() {
        let mut states = line_states(2);
        let tree = line_tree(2);
        route_discover(&tree, id(0), id(1), &mut states).unwrap();
        let pkt = encrypt_at_source(states.get_mut(&id(0)).unwrap(), id(1), b"x").unwrap();
        states.get_mut(&id(1)).unwrap().neighbor_keys.remove(&id(0));
        let outcome = handle_packet(states.get_mut(&id(1)).unwrap(), &pkt);
        assert_eq!(outcome, HandleOutcome::Dropped(DropReason::KeyUnavailable));
    }

    #[test]
    fn wrong_key_version_drops_packet() {
        let mut states = line_states(2);
        let tree = line_tree(2);
        route_discover(&tree, id(0), id(1), &mut states).unwrap();
        let pkt = encrypt_at_source(states.get_mut(&id(0)).unwrap(), id(1), b"x").unwrap();
        let b = states.get_mut(&id(1)).unwrap();
        let stale = generate_neighborhood_key(id(0), 9, SEED);
        b.neighbor_keys.insert(id(0), stale);
        assert_eq!(
            handle_packet(b, &pkt),
            HandleOutcome::Dropped(DropReason::KeyUnavailable)
        );
    }

    #[test]
    fn handshake_exchanges_current_keys() {
        let mut states = line_states(2);
        // reset learned keys; keep pubkeys as if heard in HELLOs
        states.get_mut(&id(0)).unwrap().neighbor_keys.clear();
        states.get_mut(&id(1)).unwrap().neighbor_keys.clear();
        let (m0, m1) = handshake(&states[&id(0)], &states[&id(1)]).unwrap();
        apply_key_update(states.get_mut(&id(1)).unwrap(), &m0).unwrap();
        apply_key_update(states.get_mut(&id(0)).unwrap(), &m1).unwrap();
        assert_eq!(states[&id(0)].neighbor_keys[&id(1)], states[&id(1)].own_key);
        assert_eq!(states[&id(1)].neighbor_keys[&id(0)], states[&id(0)].own_key);
    }

    #[test]
    fn handshake_requires_public_keys() {
        let mut states = line_states(2);
        states
            .get_mut(&id(0))
            .unwrap()
            .neighbor_pubkeys
            .remove(&id(1));
        assert_eq!(
            handshake(&states[&id(0)], &states[&id(1)]),
            Err(ProtocolError::HandshakeDeferred {
                node: id(0),
                missing: id(1)
            })
        );
    }

    #[test]
    fn wrapped_key_unwraps_to_sixteen_octets() {
        let states = line_states(2);
        let (m0, _) = handshake(&states[&id(0)], &states[&id(1)]).unwrap();
        let bytes = rsa_unwrap(&states[&id(1)].rsa, &m0.wrapped_key).unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(bytes, states[&id(0)].own_key.bytes);
    }

    #[test]
    fn eavesdropper_with_wrong_exponents_recovers_nothing() {
        let states = line_states(2);
        let (m0, _) = handshake(&states[&id(0)], &states[&id(1)]).unwrap();
        let true_key = states[&id(0)].own_key.bytes;
        let receiver = states[&id(1)].rsa;
        for offset in 1..=100u64 {
            let mut forged = receiver;
            forged.d = receiver.d + offset;
            // a corruption error also counts as failure to recover
            if let Ok(bytes) = rsa_unwrap(&forged, &m0.wrapped_key) {
                assert_ne!(bytes.as_slice(), true_key.as_slice());
            }
        }
    }

    #[test]
    fn hello_from_tree_neighbor_triggers_handshake() {
        let mut states = line_states(2);
        let b = states.get_mut(&id(1)).unwrap();
        b.neighbor_keys.clear();
        b.neighbor_pubkeys.clear();
        let hello = HelloMessage {
            sender: id(0),
            public_key: states[&id(0)].rsa.public(),
            timestamp: SimTime(0),
        };
        assert!(handle_hello(states.get_mut(&id(1)).unwrap(), &hello));
        // idempotent once the key is known
        let key = states[&id(0)].own_key;
        states
            .get_mut(&id(1))
            .unwrap()
            .neighbor_keys
            .insert(id(0), key);
        assert!(!handle_hello(states.get_mut(&id(1)).unwrap(), &hello));
    }

    #[test]
    fn hello_from_non_neighbor_only_caches_pubkey() {
        let mut states = line_states(3);
        let hello = HelloMessage {
            sender: id(2),
            public_key: states[&id(2)].rsa.public(),
            timestamp: SimTime(0),
        };
        let a = states.get_mut(&id(0)).unwrap();
        a.neighbor_pubkeys.remove(&id(2));
        assert!(!handle_hello(a, &hello));
        assert!(a.neighbor_pubkeys.contains_key(&id(2)));
    }

    #[test]
    fn route_discovery_populates_chain_tables() {
        let mut states = line_states(3);
        for state in states.values_mut() {
            state.routing.clear();
        }
        let tree = line_tree(3);
        let discovery = route_discover(&tree, id(0), id(2), &mut states)
            .unwrap()
            .unwrap();
        assert_eq!(discovery.request.hop_trace, vec![id(0), id(1), id(2)]);
        assert_eq!(discovery.reply.hop_trace, vec![id(2), id(1), id(0)]);
        assert_eq!(states[&id(0)].routing[&id(2)], id(1));
        assert_eq!(states[&id(1)].routing[&id(2)], id(2));
        assert_eq!(states[&id(1)].routing[&id(0)], id(0));
        assert_eq!(states[&id(2)].routing[&id(0)], id(1));
    }

    #[test]
    fn route_discovery_to_self_is_a_no_op() {
        let mut states = line_states(2);
        let before = states[&id(0)].routing.clone();
        let tree = line_tree(2);
        assert_eq!(
            route_discover(&tree, id(0), id(0), &mut states).unwrap(),
            None
        );
        assert_eq!(states[&id(0)].routing, before);
    }

    #[test]
    fn rekey_bumps_version_and_purges_departed() {
        let mut states = line_states(3);
        let b = states.get_mut(&id(1)).unwrap();
        let old_version = b.own_key.version;
        // node 2 departs
        b.neighbors.remove(&id(2));
        let updates = rekey_on_membership_change(b, SEED);
        assert_eq!(b.own_key.version, old_version + 1);
        assert!(!b.neighbor_keys.contains_key(&id(2)));
        assert_eq!(updates.len(), 1);
        assert_eq!(updates[0].recipient, id(0));
        assert_eq!(updates[0].version, old_version + 1);
    }

    #[test]
    fn stale_and_foreign_key_updates_are_ignored() {
        let mut states = line_states(2);
        let (m0, _) = handshake(&states[&id(0)], &states[&id(1)]).unwrap();
        let b = states.get_mut(&id(1)).unwrap();
        assert_eq!(
            apply_key_update(b, &m0).unwrap(),
            KeyUpdateOutcome::IgnoredStale
        );
        b.neighbors.remove(&id(0));
        assert_eq!(
            apply_key_update(b, &m0).unwrap(),
            KeyUpdateOutcome::IgnoredNotNeighbor
        );
    }

    #[test]
    fn packet_codec_round_trip() {
        let pkt = Packet {
            header: PacketHeader {
                src: id(1),
                next_hop: id(2),
                dest: id(3),
                seq: 0xdead_beef,
                wrap_owner: id(2),
                wrap_version: 7,
            },
            wrapped_mkey: [1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
            body: b"arbitrary bytes".to_vec(),
        };
        assert_eq!(Packet::from_bytes(&pkt.to_bytes()).unwrap(), pkt);
        assert_eq!(
            Packet::from_bytes(&[0u8; 10]),
            Err(ProtocolError::TruncatedPacket(10))
        );
    }
}
