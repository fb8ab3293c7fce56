//! Deterministic Louvain modularity maximization.
//!
//! Standard modularity at resolution 1. Nodes are visited in ascending index
//! order and ties in modularity gain break towards the smallest community id,
//! so repeated runs on the same graph produce the same partition.

/// Final node-to-community assignment plus the modularity reached after each
/// pass (local moves + aggregation). Modularity never decreases across passes.
#[derive(Debug, Clone)]
pub struct LouvainResult {
    pub assignment: Vec<usize>,
    pub pass_modularity: Vec<f64>,
}

struct Level {
    /// adjacency with accumulated weights; self-loops kept separately
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    /// weighted degree (self-loops count twice)
    degree: Vec<f64>,
    two_m: f64,
}

impl Level {
    fn from_edges(n: usize, edges: &[(u32, u32, f64)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        let mut self_loop = vec![0.0; n];
        for &(a, b, w) in edges {
            assert!(w > 0.0, "edge weights must be positive");
            let (a, b) = (a as usize, b as usize);
            if a == b {
                self_loop[a] += w;
            } else {
                accumulate(&mut adj[a], b, w);
                accumulate(&mut adj[b], a, w);
            }
        }
        let mut degree = vec![0.0; n];
        let mut two_m = 0.0;
        for i in 0..n {
            let d: f64 = adj[i].iter().map(|&(_, w)| w).sum::<f64>() + 2.0 * self_loop[i];
            degree[i] = d;
            two_m += d;
        }
        Self {
            adj,
            self_loop,
            degree,
            two_m,
        }
    }

    fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    fn modularity(&self, comm: &[usize]) -> f64 {
        if self.two_m <= 0.0 {
            return 0.0;
        }
        let ncomm = comm.iter().copied().max().map_or(0, |m| m + 1);
        let mut internal = vec![0.0; ncomm]; // twice the internal edge weight
        let mut total = vec![0.0; ncomm];
        for i in 0..self.num_nodes() {
            total[comm[i]] += self.degree[i];
            internal[comm[i]] += 2.0 * self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                if comm[j] == comm[i] {
                    internal[comm[i]] += w;
                }
            }
        }
        let m2 = self.two_m;
        (0..ncomm)
            .map(|c| internal[c] / m2 - (total[c] / m2) * (total[c] / m2))
            .sum()
    }
}

fn accumulate(list: &mut Vec<(usize, f64)>, node: usize, w: f64) {
    if let Some(entry) = list.iter_mut().find(|(n, _)| *n == node) {
        entry.1 += w;
    } else {
        list.push((node, w));
    }
}

/// Runs Louvain on an undirected weighted graph given as an edge list.
/// Isolated nodes end up in singleton communities. Community ids are
/// renumbered densely in order of their smallest member node.
pub fn cluster(num_nodes: usize, edges: &[(u32, u32, f64)]) -> LouvainResult {
    let mut level = Level::from_edges(num_nodes, edges);
    // maps original node -> community of the current level
    let mut assignment: Vec<usize> = (0..num_nodes).collect();
    let mut pass_modularity = Vec::new();
    let mut current_q = level.modularity(&(0..level.num_nodes()).collect::<Vec<_>>());

    loop {
        let comm = local_moves(&level);
        let q = level.modularity(&comm);
        pass_modularity.push(q);
        debug_assert!(
            q >= current_q - 1e-12,
            "modularity decreased: {current_q} -> {q}"
        );
        let improved = q > current_q + 1e-12;
        current_q = q;

        // compact community ids in order of smallest member, then compose
        let mut remap = vec![usize::MAX; level.num_nodes()];
        let mut next = 0;
        for &c in &comm {
            if remap[c] == usize::MAX {
                remap[c] = next;
                next += 1;
            }
        }
        let comm: Vec<usize> = comm.iter().map(|&c| remap[c]).collect();
        for a in assignment.iter_mut() {
            *a = comm[*a];
        }
        if !improved || next <= 1 {
            break;
        }
        level = aggregate(&level, &comm, next);
    }

    LouvainResult {
        assignment,
        pass_modularity,
    }
}

/// One local-move phase: repeatedly sweep the nodes in order, moving each to
/// the neighbor community of highest positive modularity gain.
fn local_moves(level: &Level) -> Vec<usize> {
    let n = level.num_nodes();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut sigma_tot: Vec<f64> = level.degree.clone();
    if level.two_m <= 0.0 {
        return comm;
    }
    let m2 = level.two_m;

    let mut moved = true;
    let mut sweeps = 0;
    while moved && sweeps < 100 {
        moved = false;
        sweeps += 1;
        for i in 0..n {
            let current = comm[i];
            // weight from i into each neighboring community
            let mut links: Vec<(usize, f64)> = Vec::with_capacity(level.adj[i].len());
            for &(j, w) in &level.adj[i] {
                accumulate(&mut links, comm[j], w);
            }
            let to_current = links
                .iter()
                .find(|(c, _)| *c == current)
                .map_or(0.0, |&(_, w)| w);
            sigma_tot[current] -= level.degree[i];

            // gain of joining community c relative to staying alone:
            //   k_i_in(c)/m2*2 ... constants cancel; compare
            //   k_i_in(c) - degree_i * sigma_tot(c) / m2
            let score = |k_in: f64, tot: f64| k_in - level.degree[i] * tot / m2;
            let mut best_comm = current;
            let mut best_score = score(to_current, sigma_tot[current]);
            links.sort_unstable_by_key(|&(c, _)| c);
            for &(c, k_in) in &links {
                if c == current {
                    continue;
                }
                let s = score(k_in, sigma_tot[c]);
                if s > best_score + 1e-12 {
                    best_score = s;
                    best_comm = c;
                } else if (s - best_score).abs() <= 1e-12 && c < best_comm {
                    best_comm = c;
                }
            }
            sigma_tot[best_comm] += level.degree[i];
            if best_comm != current {
                comm[i] = best_comm;
                moved = true;
            }
        }
    }
    comm
}

fn aggregate(level: &Level, comm: &[usize], ncomm: usize) -> Level {
    let mut adj = vec![Vec::new(); ncomm];
    let mut self_loop = vec![0.0; ncomm];
    for i in 0..level.num_nodes() {
        let ci = comm[i];
        self_loop[ci] += level.self_loop[i];
        for &(j, w) in &level.adj[i] {
            let cj = comm[j];
            if ci == cj {
                if i < j {
                    self_loop[ci] += w;
                }
            } else {
                accumulate(&mut adj[ci], cj, w);
            }
        }
    }
    let mut degree = vec![0.0; ncomm];
    let mut two_m = 0.0;
    for i in 0..ncomm {
        adj[i].sort_unstable_by_key(|&(n, _)| n);
        let d: f64 = adj[i].iter().map(|&(_, w)| w).sum::<f64>() + 2.0 * self_loop[i];
        degree[i] = d;
        two_m += d;
    }
    Level {
        adj,
        self_loop,
        degree,
        two_m,
    }
}

/// Standalone modularity of a partition, used as an oracle in tests and to
/// assert the per-pass monotonicity contract.
pub fn modularity(num_nodes: usize, edges: &[(u32, u32, f64)], assignment: &[usize]) -> f64 {
    Level::from_edges(num_nodes, edges).modularity(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(assignment: &[usize]) -> Vec<Vec<usize>> {
        let ncomm = assignment.iter().copied().max().map_or(0, |m| m + 1);
        let mut out = vec![Vec::new(); ncomm];
        for (node, &c) in assignment.iter().enumerate() {
            out[c].push(node);
        }
        out.retain(|g| !g.is_empty());
        out
    }

    #[test]
    fn disconnected_cliques_form_two_communities() {
        let mut edges = Vec::new();
        for group in [[0u32, 1, 2, 3], [4, 5, 6, 7]] {
            for i in 0..4 {
                for j in i + 1..4 {
                    edges.push((group[i], group[j], 1.0));
                }
            }
        }
        let result = cluster(8, &edges);
        let gs = groups(&result.assignment);
        assert_eq!(gs.len(), 2);
        assert_eq!(gs[0], vec![0, 1, 2, 3]);
        assert_eq!(gs[1], vec![4, 5, 6, 7]);
    }

    #[test]
    fn modularity_matches_hand_computed_value() {
        // two triangles joined by one bridge edge, unit weights
        let edges = [
            (0u32, 1, 1.0),
            (1, 2, 1.0),
            (2, 0, 1.0),
            (3, 4, 1.0),
            (4, 5, 1.0),
            (5, 3, 1.0),
            (2, 3, 1.0),
        ];
        // partition {0,1,2} {3,4,5}: Q = 2*(3/7 - (7/14)^2) = 5/14
        let q = modularity(6, &edges, &[0, 0, 0, 1, 1, 1]);
        assert!((q - 5.0 / 14.0).abs() < 1e-12, "q = {q}");
        let result = cluster(6, &edges);
        assert_eq!(groups(&result.assignment).len(), 2);
        let found = modularity(6, &edges, &result.assignment);
        assert!((found - 5.0 / 14.0).abs() < 1e-12);
    }

    #[test]
    fn returned_partition_beats_singletons() {
        let edges = [
            (0u32, 1, 1.0),
            (1, 2, 0.5),
            (2, 3, 2.0),
            (3, 0, 1.0),
            (1, 3, 0.25),
        ];
        let result = cluster(4, &edges);
        let singles = modularity(4, &edges, &[0, 1, 2, 3]);
        let found = modularity(4, &edges, &result.assignment);
        assert!(found >= singles);
    }

    #[test]
    fn passes_are_monotone() {
        let mut edges = Vec::new();
        // ring of 12 small cliques, a classic multi-pass instance
        for c in 0..12u32 {
            let base = c * 4;
            for i in 0..4 {
                for j in i + 1..4 {
                    edges.push((base + i, base + j, 1.0));
                }
            }
            let next = ((c + 1) % 12) * 4;
            edges.push((base, next, 1.0));
        }
        let result = cluster(48, &edges);
        for w in result.pass_modularity.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "passes decreased: {w:?}");
        }
        assert!(result.pass_modularity.len() >= 2);
    }

    #[test]
    fn empty_graph_yields_singletons() {
        let result = cluster(3, &[]);
        assert_eq!(result.assignment, vec![0, 1, 2]);
    }
}
