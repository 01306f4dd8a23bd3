//! Secure group communication over a spanning-tree overlay for wireless
//! ad hoc networks.
//!
//! Nodes within radio range form a geometric graph; its minimum spanning
//! tree is the overlay along which every message travels. Each node owns a
//! versioned symmetric *neighborhood key* shared only with its tree
//! neighbors. A message is encrypted once, end to end, under a per-message
//! key derived from the sender's MAC address and sequence number; that
//! message key is wrapped under the transmitting node's neighborhood key
//! and re-wrapped at every hop. Membership changes re-key only the nodes
//! whose neighbor set changed, giving forward and backward secrecy without
//! global re-keying.
//!
//! The crate is organized as:
//!
//! - [`topology`] — radio graph, minimum spanning tree, tree paths
//! - [`crypto`] — toy RSA, two symmetric ciphers, key derivation
//! - [`protocol`] — per-node state machine: handshake, encrypt, forward, re-key
//! - [`sim`] — deterministic discrete-event engine, metrics, trace log
//!
//! All cryptography here is intentionally toy-scale (see [`crypto`]); the
//! point of the crate is protocol mechanics and key-possession semantics,
//! not cryptographic strength.

pub mod crypto;
pub mod protocol;
pub mod sim;
pub mod topology;
