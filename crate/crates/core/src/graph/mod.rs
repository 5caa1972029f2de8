//! Diffusion networks: directed graphs with per-edge infection and per-node
//! recovery probabilities, their non-backtracking line graphs, synthetic
//! topology generators and instance I/O.
//!
//! Edges are stored in canonical `(src, dst)` order. Every index-based
//! structure downstream (messages, line-graph nodes, hidden states) uses
//! this order, so two graphs built from the same edge set are identical
//! regardless of the order the edges were supplied in.

mod generate;
mod instance;
mod line;

pub use generate::{generate_graph, Topology, TopologySpec};
pub use instance::{load_instance, read_edge_list, save_instance, Instance};
pub use line::LineGraph;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    reverse: Vec<Option<usize>>,
}

fn check_rate(field: &'static str, index: usize, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::RateOutOfRange { field, index, value })
    }
}

impl Graph {
    /// Builds a graph from `(src, dst, beta)` triples and per-node recovery
    /// probabilities. Edges are re-sorted into canonical order.
    pub fn new(n: usize, directed_edges: &[(usize, usize, f64)], gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() != n {
            return Err(Error::LengthMismatch {
                field: "gamma",
                expected: n,
                got: gamma.len(),
            });
        }
        for (i, &g) in gamma.iter().enumerate() {
            check_rate("gamma", i, g)?;
        }
        for (index, &(src, dst, b)) in directed_edges.iter().enumerate() {
            for node in [src, dst] {
                if node >= n {
                    return Err(Error::EndpointOutOfRange { index, node, n });
                }
            }
            if src == dst {
                return Err(Error::SelfLoop { node: src });
            }
            check_rate("beta", index, b)?;
        }

        let mut sorted: Vec<(Edge, f64)> = directed_edges
            .iter()
            .map(|&(src, dst, b)| (Edge { src, dst }, b))
            .collect();
        sorted.sort_by_key(|a| a.0);
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateEdge {
                    src: w[0].0.src,
                    dst: w[0].0.dst,
                });
            }
        }
        let (edges, beta): (Vec<Edge>, Vec<f64>) = sorted.into_iter().unzip();

        let mut in_edges = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        for (e, edge) in edges.iter().enumerate() {
            out_edges[edge.src].push(e);
            in_edges[edge.dst].push(e);
        }
        let reverse = edges
            .iter()
            .map(|edge| {
                edges
                    .binary_search(&Edge {
                        src: edge.dst,
                        dst: edge.src,
                    })
                    .ok()
            })
            .collect();

        Ok(Graph {
            n,
            edges,
            beta,
            gamma,
            in_edges,
            out_edges,
            reverse,
        })
    }

    /// Expands undirected pairs into both directions, using the same
    /// infection probability for each direction.
    pub fn from_undirected(n: usize, pairs: &[(usize, usize, f64)], gamma: Vec<f64>) -> Result<Self> {
        let directed: Vec<_> = pairs
            .iter()
            .flat_map(|&(a, b, beta)| [(a, b, beta), (b, a, beta)])
            .collect();
        Graph::new(n, &directed, gamma)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> Edge {
        self.edges[e]
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Edge ids `(j -> i)` entering node `i`, in canonical order.
    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out_edges[node]
    }

    /// Id of the edge `(dst -> src)` for edge `e = (src -> dst)`, if present.
    pub fn reverse(&self, e: usize) -> Option<usize> {
        self.reverse[e]
    }

    pub fn find_edge(&self, src: usize, dst: usize) -> Option<usize> {
        self.edges.binary_search(&Edge { src, dst }).ok()
    }

    pub fn in_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.in_edges[node].iter().map(|&e| self.edges[e].src)
    }

    pub fn out_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_edges[node].iter().map(|&e| self.edges[e].dst)
    }

    pub fn is_symmetric(&self) -> bool {
        self.reverse.iter().all(Option::is_some)
    }

    /// Replaces the rates while keeping the topology.
    pub fn with_rates(mut self, beta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if beta.len() != self.edges.len() {
            return Err(Error::LengthMismatch {
                field: "beta",
                expected: self.edges.len(),
                got: beta.len(),
            });
        }
        if gamma.len() != self.n {
            return Err(Error::LengthMismatch {
                field: "gamma",
                expected: self.n,
                got: gamma.len(),
            });
        }
        for (i, &b) in beta.iter().enumerate() {
            check_rate("beta", i, b)?;
        }
        for (i, &g) in gamma.iter().enumerate() {
            check_rate("gamma", i, g)?;
        }
        self.beta = beta;
        self.gamma = gamma;
        Ok(self)
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::LengthMismatch {
                field: "perm",
                expected: self.n,
                got: perm.len(),
            });
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .zip(&self.beta)
            .map(|(e, &b)| (perm[e.src], perm[e.dst], b))
            .collect();
        let mut gamma = vec![0.0; self.n];
        for (i, &g) in self.gamma.iter().enumerate() {
            gamma[perm[i]] = g;
        }
        Graph::new(self.n, &edges, gamma)
    }

    pub fn degree_moments(&self) -> (f64, f64) {
        if self.n == 0 {
            return (0.0, 0.0);
        }
        let n = self.n as f64;
        let k1 = self.in_edges.iter().map(|l| l.len() as f64).sum::<f64>() / n;
        let k2 = self.in_edges.iter().map(|l| (l.len() * l.len()) as f64).sum::<f64>() / n;
        (k1, k2)
    }

    /// Epidemic threshold estimate `gamma <k> / (<k^2> - <k>)`, used only to
    /// annotate parameter sweeps.
    pub fn tipping_point(&self, gamma: f64) -> Option<f64> {
        let (k1, k2) = self.degree_moments();
        let denom = k2 - k1;
        (denom > 0.0).then(|| gamma * k1 / denom)
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in self.out_neighbors(u).chain(self.in_neighbors(u)) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_bidirectional() {
        let g = Graph::new(2, &[(0, 1, 0.5), (1, 0, 0.5)], vec![0.5, 0.5]).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.in_edges(1), &[0]);
        assert_eq!(g.reverse(0), Some(1));
        assert!(g.is_symmetric());
    }

    #[test]
    fn isolated_node() {
        let g = Graph::new(1, &[], vec![0.3]).unwrap();
        assert_eq!(g.n(), 1);
        assert_eq!(g.num_edges(), 0);
        assert!(g.in_edges(0).is_empty());
    }

    #[test]
    fn rejects_each_invalid_input_distinctly() {
        let gamma = vec![0.5, 0.5];
        assert!(matches!(
            Graph::new(2, &[(0, 0, 0.5)], gamma.clone()),
            Err(Error::SelfLoop { node: 0 })
        ));
        assert!(matches!(
            Graph::new(2, &[(0, 2, 0.5)], gamma.clone()),
            Err(Error::EndpointOutOfRange { node: 2, .. })
        ));
        assert!(matches!(
            Graph::new(2, &[(0, 1, 0.5), (0, 1, 0.2)], gamma.clone()),
            Err(Error::DuplicateEdge { src: 0, dst: 1 })
        ));
        assert!(matches!(
            Graph::new(2, &[(0, 1, 1.5)], gamma.clone()),
            Err(Error::RateOutOfRange { field: "beta", .. })
        ));
        assert!(matches!(
            Graph::new(2, &[(0, 1, 0.5)], vec![0.5, -0.1]),
            Err(Error::RateOutOfRange {
                field: "gamma",
                index: 1,
                ..
            })
        ));
        assert!(matches!(
            Graph::new(2, &[], vec![0.5]),
            Err(Error::LengthMismatch { field: "gamma", .. })
        ));
    }

    #[test]
    fn edges_are_canonically_sorted() {
        let a = Graph::new(3, &[(2, 1, 0.1), (0, 1, 0.2), (1, 0, 0.3)], vec![0.0; 3]).unwrap();
        let b = Graph::new(3, &[(1, 0, 0.3), (2, 1, 0.1), (0, 1, 0.2)], vec![0.0; 3]).unwrap();
        assert_eq!(a, b);
        let order: Vec<_> = a.edges().iter().map(|e| (e.src, e.dst)).collect();
        assert_eq!(order, vec![(0, 1), (1, 0), (2, 1)]);
        assert_eq!(a.beta(), &[0.2, 0.3, 0.1]);
        assert_eq!(a.reverse(2), None);
    }

    #[test]
    fn undirected_ingestion_is_symmetric() {
        let g = Graph::from_undirected(4, &[(0, 1, 0.2), (1, 2, 0.3), (3, 2, 0.4)], vec![0.1; 4]).unwrap();
        assert!(g.is_symmetric());
        for e in 0..g.num_edges() {
            let r = g.reverse(e).unwrap();
            assert_eq!(g.beta()[e], g.beta()[r]);
        }
    }

    #[test]
    fn tipping_point_of_regular_graph() {
        // k-regular: <k> = k, <k^2> = k^2, so beta* = gamma / (k - 1).
        let pairs: Vec<_> = (0..6).map(|i| (i, (i + 1) % 6, 0.1)).collect();
        let g = Graph::from_undirected(6, &pairs, vec![0.2; 6]).unwrap();
        assert!((g.tipping_point(0.2).unwrap() - 0.2).abs() < 1e-12);
    }
}
