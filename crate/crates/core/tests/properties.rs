//! Property tests for the topology, crypto, and packet-codec invariants.

use proptest::prelude::*;

use treekey_core::crypto::{
    cipher_a_decrypt, cipher_a_encrypt, cipher_b_encrypt, derive_message_key, rsa_keygen,
    rsa_unwrap, rsa_wrap, MacAddress,
};
use treekey_core::protocol::{Packet, PacketHeader};
use treekey_core::topology::{
    build_mst, build_radio_graph, euclidean_distance, neighbor_table, tree_path, NodeId, Position,
    SpanningTree,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn nodes_from(points: &[(f64, f64)]) -> Vec<(NodeId, Position)> {
    points
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| (NodeId(i as u32), Position::new(x, y)))
        .collect()
}

/// Complete geometric graph (range far beyond any pairwise distance).
fn complete_tree(points: &[(f64, f64)]) -> SpanningTree {
    let graph = build_radio_graph(&nodes_from(points), 1_000.0).unwrap();
    build_mst(&graph).unwrap()
}

/// Minimum spanning-tree weight by exhaustive enumeration, independent of
/// the Kruskal path under test: recurse over include/exclude decisions for
/// each edge, keeping only acyclic selections.
fn brute_force_mst_weight(n: usize, edges: &[(usize, usize, f64)]) -> Option<f64> {
    fn find(parent: &mut [usize], x: usize) -> usize {
        if parent[x] != x {
            parent[x] = find(parent, parent[x]);
        }
        parent[x]
    }

    fn recurse(
        edges: &[(usize, usize, f64)],
        idx: usize,
        chosen: usize,
        n: usize,
        parent: &[usize],
        weight: f64,
        best: &mut Option<f64>,
    ) {
        if chosen == n - 1 {
            if best.is_none_or(|b| weight < b) {
                *best = Some(weight);
            }
            return;
        }
        if idx == edges.len() || edges.len() - idx < (n - 1) - chosen {
            return;
        }
        let (a, b, w) = edges[idx];
        let mut with = parent.to_vec();
        let (ra, rb) = (find(&mut with, a), find(&mut with, b));
        if ra != rb {
            with[ra] = rb;
            recurse(edges, idx + 1, chosen + 1, n, &with, weight + w, best);
        }
        recurse(edges, idx + 1, chosen, n, parent, weight, best);
    }

    if n == 0 {
        return None;
    }
    let parent: Vec<usize> = (0..n).collect();
    let mut best = None;
    recurse(edges, 0, 0, n, &parent, 0.0, &mut best);
    best
}

fn point_strategy() -> impl Strategy<Value = (f64, f64)> {
    (0.0..100.0f64, 0.0..100.0f64)
}

proptest! {
    #[test]
    fn mst_weight_matches_brute_force(points in proptest::collection::vec(point_strategy(), 3..=6)) {
        let nodes = nodes_from(&points);
        let graph = build_radio_graph(&nodes, 1_000.0).unwrap();
        let tree = build_mst(&graph).unwrap();
        let edges: Vec<(usize, usize, f64)> = graph
            .edges()
            .iter()
            .map(|e| (e.a.0 as usize, e.b.0 as usize, e.weight))
            .collect();
        let best = brute_force_mst_weight(points.len(), &edges).unwrap();
        prop_assert!((tree.total_weight() - best).abs() <= 1e-9 * best.max(1.0));
    }

    #[test]
    fn mst_has_n_minus_one_edges_and_no_cycle(points in proptest::collection::vec(point_strategy(), 1..=10)) {
        let tree = complete_tree(&points);
        prop_assert_eq!(tree.edges().len(), points.len() - 1);
        // n-1 edges over n connected nodes cannot contain a cycle; check
        // connectivity by walking from the root.
        let mut seen = std::collections::BTreeSet::from([tree.root()]);
        let mut stack = vec![tree.root()];
        while let Some(cur) = stack.pop() {
            for &next in tree.neighbors(cur).unwrap() {
                if seen.insert(next) {
                    stack.push(next);
                }
            }
        }
        prop_assert_eq!(seen.len(), points.len());
    }

    #[test]
    fn tree_path_reverses(points in proptest::collection::vec(point_strategy(), 2..=10), picks: (prop::sample::Index, prop::sample::Index)) {
        let tree = complete_tree(&points);
        let a = NodeId(picks.0.index(points.len()) as u32);
        let b = NodeId(picks.1.index(points.len()) as u32);
        let forward = tree_path(&tree, a, b).unwrap();
        let mut backward = tree_path(&tree, b, a).unwrap();
        backward.reverse();
        prop_assert_eq!(forward, backward);
    }

    #[test]
    fn tree_path_is_simple_and_follows_edges(points in proptest::collection::vec(point_strategy(), 2..=10), picks: (prop::sample::Index, prop::sample::Index)) {
        let tree = complete_tree(&points);
        let a = NodeId(picks.0.index(points.len()) as u32);
        let b = NodeId(picks.1.index(points.len()) as u32);
        let path = tree_path(&tree, a, b).unwrap();
        prop_assert_eq!(path.first(), Some(&a));
        prop_assert_eq!(path.last(), Some(&b));
        let unique: std::collections::BTreeSet<_> = path.iter().collect();
        prop_assert_eq!(unique.len(), path.len());
        for pair in path.windows(2) {
            prop_assert!(tree.neighbors(pair[0]).unwrap().contains(&pair[1]));
        }
    }

    #[test]
    fn neighbor_relation_is_symmetric(points in proptest::collection::vec(point_strategy(), 2..=10)) {
        let tree = complete_tree(&points);
        for a in tree.nodes() {
            let table = neighbor_table(&tree, a).unwrap();
            for &b in &table.neighbors {
                prop_assert!(neighbor_table(&tree, b).unwrap().neighbors.contains(&a));
            }
        }
    }

    #[test]
    fn distance_satisfies_triangle_inequality(a in point_strategy(), b in point_strategy(), c in point_strategy()) {
        let (pa, pb, pc) = (
            Position::new(a.0, a.1),
            Position::new(b.0, b.1),
            Position::new(c.0, c.1),
        );
        let ab = euclidean_distance(pa, pb).unwrap();
        let bc = euclidean_distance(pb, pc).unwrap();
        let ac = euclidean_distance(pa, pc).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
        // symmetry while we are here
        prop_assert_eq!(ab, euclidean_distance(pb, pa).unwrap());
    }

    #[test]
    fn cipher_a_round_trips_and_preserves_length(
        key in proptest::collection::vec(any::<u8>(), 1..32),
        plaintext in proptest::collection::vec(any::<u8>(), 0..256),
    ) {
        let ciphertext = cipher_a_encrypt(&key, &plaintext).unwrap();
        prop_assert_eq!(ciphertext.len(), plaintext.len());
        prop_assert_eq!(cipher_a_decrypt(&key, &ciphertext).unwrap(), plaintext);
    }

    #[test]
    fn cipher_b_round_trips_and_preserves_length(
        key in proptest::collection::vec(any::<u8>(), 1..32),
        plaintext in proptest::collection::vec(any::<u8>(), 0..256),
    ) {
        let ciphertext = cipher_b_encrypt(&key, &plaintext).unwrap();
        prop_assert_eq!(ciphertext.len(), plaintext.len());
        prop_assert_eq!(cipher_b_encrypt(&key, &ciphertext).unwrap(), plaintext);
    }

    #[test]
    fn rsa_round_trips_every_byte_value(seed in any::<u64>()) {
        let pair = rsa_keygen(&mut ChaCha8Rng::seed_from_u64(seed));
        let all: Vec<u8> = (0..=255).collect();
        let wrapped = rsa_wrap(&pair.public(), &all);
        prop_assert_eq!(rsa_unwrap(&pair, &wrapped).unwrap(), all);
    }

    #[test]
    fn message_keys_are_injective(
        mac_a in any::<[u8; 6]>(),
        mac_b in any::<[u8; 6]>(),
        seq_a in any::<u32>(),
        seq_b in any::<u32>(),
    ) {
        let key_a = derive_message_key(&MacAddress(mac_a), seq_a);
        let key_b = derive_message_key(&MacAddress(mac_b), seq_b);
        prop_assert_eq!((mac_a, seq_a) == (mac_b, seq_b), key_a == key_b);
    }

    #[test]
    fn packet_codec_round_trips(
        fields in any::<[u32; 6]>(),
        wrapped in any::<[u8; 10]>(),
        body in proptest::collection::vec(any::<u8>(), 0..128),
    ) {
        let packet = Packet {
            header: PacketHeader {
                src: NodeId(fields[0]),
                next_hop: NodeId(fields[1]),
                dest: NodeId(fields[2]),
                seq: fields[3],
                wrap_owner: NodeId(fields[4]),
                wrap_version: fields[5],
            },
            wrapped_mkey: wrapped,
            body,
        };
        let bytes = packet.to_bytes();
        prop_assert_eq!(Packet::from_bytes(&bytes).unwrap(), packet);
    }
}
