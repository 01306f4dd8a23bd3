//! Oracles shared by the integration suites. These stay independent of
//! the implementation paths they check.

/// Minimum spanning-tree weight by exhaustive enumeration over edge
/// subsets (include/exclude recursion keeping only acyclic selections).
pub fn brute_force_mst_weight(n: usize, edges: &[(usize, usize, f64)]) -> Option<f64> {
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
