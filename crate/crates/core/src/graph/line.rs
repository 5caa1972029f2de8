use super::Graph;

/// Non-backtracking line graph: one node per directed edge of the base graph
/// and an arc `(i->j) -> (j->k)` for every pair with `i != k`.
///
/// Line-node ids coincide with base edge ids. The in-arc list of line-node
/// `(i->k)` is the set of edges `(j->i)`, `j != k`, which is exactly the
/// cavity neighbourhood used by message passing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineGraph {
    arcs: Vec<(usize, usize)>,
    in_arcs: Vec<Vec<usize>>,
    node_incoming: Vec<Vec<usize>>,
}

impl LineGraph {
    pub fn new(g: &Graph) -> Self {
        let mut arcs = Vec::new();
        let mut in_arcs = vec![Vec::new(); g.num_edges()];
        for (e, edge) in g.edges().iter().enumerate() {
            for &f in g.out_edges(edge.dst) {
                if g.edge(f).dst != edge.src {
                    arcs.push((e, f));
                }
            }
        }
        // Canonical edge order makes the in-arc lists sorted as well.
        for &(from, to) in &arcs {
            in_arcs[to].push(from);
        }
        for list in &mut in_arcs {
            list.sort_unstable();
        }
        let node_incoming = (0..g.n()).map(|i| g.in_edges(i).to_vec()).collect();
        LineGraph {
            arcs,
            in_arcs,
            node_incoming,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.in_arcs.len()
    }

    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    /// Line-nodes `(k->i)`, `k != j`, feeding line-node `e = (i->j)`.
    pub fn in_arcs(&self, e: usize) -> &[usize] {
        &self.in_arcs[e]
    }

    pub fn all_in_arcs(&self) -> &[Vec<usize>] {
        &self.in_arcs
    }

    /// Line-nodes `(k->i)` for every in-neighbour `k` of base node `i`.
    pub fn node_incoming(&self, node: usize) -> &[usize] {
        &self.node_incoming[node]
    }

    pub fn all_node_incoming(&self) -> &[Vec<usize>] {
        &self.node_incoming
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn undirected(n: usize, pairs: &[(usize, usize)]) -> Graph {
        let p: Vec<_> = pairs.iter().map(|&(a, b)| (a, b, 0.5)).collect();
        Graph::from_undirected(n, &p, vec![0.5; n]).unwrap()
    }

    fn arc_names(g: &Graph, lg: &LineGraph) -> BTreeSet<((usize, usize), (usize, usize))> {
        lg.arcs()
            .iter()
            .map(|&(a, b)| {
                let (ea, eb) = (g.edge(a), g.edge(b));
                ((ea.src, ea.dst), (eb.src, eb.dst))
            })
            .collect()
    }

    fn brute_force_arcs(g: &Graph) -> BTreeSet<((usize, usize), (usize, usize))> {
        let mut out = BTreeSet::new();
        for a in g.edges() {
            for b in g.edges() {
                if a.dst == b.src && a.src != b.dst {
                    out.insert(((a.src, a.dst), (b.src, b.dst)));
                }
            }
        }
        out
    }

    #[test]
    fn path_graph_arcs() {
        let g = undirected(3, &[(0, 1), (1, 2)]);
        let lg = LineGraph::new(&g);
        assert_eq!(lg.num_nodes(), 4);
        let expected: BTreeSet<_> = [((0, 1), (1, 2)), ((2, 1), (1, 0))].into_iter().collect();
        assert_eq!(arc_names(&g, &lg), expected);
    }

    #[test]
    fn two_node_graph_has_no_arcs() {
        let g = undirected(2, &[(0, 1)]);
        let lg = LineGraph::new(&g);
        assert_eq!(lg.num_nodes(), 2);
        assert!(lg.arcs().is_empty());
    }

    #[test]
    fn diamond_has_eight_arcs() {
        let g = undirected(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        let lg = LineGraph::new(&g);
        assert_eq!(lg.num_nodes(), 8);
        assert_eq!(lg.arcs().len(), 8);
        // (1->3) is fed only by (0->1).
        let e13 = g.find_edge(1, 3).unwrap();
        assert_eq!(lg.in_arcs(e13), &[g.find_edge(0, 1).unwrap()]);
    }

    #[test]
    fn complete_graphs_match_brute_force() {
        for n in 2..=6 {
            let pairs: Vec<_> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
            let g = undirected(n, &pairs);
            let lg = LineGraph::new(&g);
            assert_eq!(arc_names(&g, &lg), brute_force_arcs(&g));
            assert_eq!(lg.arcs().len(), n * (n - 1) * (n - 2));
            assert!(lg.arcs().iter().all(|&(a, b)| g.reverse(a) != Some(b)));
        }
    }

    #[test]
    fn directed_graph_keeps_one_way_arcs() {
        let g = Graph::new(3, &[(0, 1, 0.5), (1, 2, 0.5), (2, 0, 0.5)], vec![0.1; 3]).unwrap();
        let lg = LineGraph::new(&g);
        assert_eq!(arc_names(&g, &lg), brute_force_arcs(&g));
        assert_eq!(lg.arcs().len(), 3);
    }
}
