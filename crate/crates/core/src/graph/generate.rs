use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

const MAX_ATTEMPTS: usize = 1000;

/// Synthetic topology families and their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySpec {
    /// Uniform random labelled tree.
    Tree {
        n: usize,
    },
    Cycle {
        n: usize,
    },
    Grid {
        rows: usize,
        cols: usize,
    },
    /// Random `degree`-regular graph.
    Regular {
        n: usize,
        degree: usize,
    },
    ErdosRenyi {
        n: usize,
        p: f64,
    },
    /// Ring lattice where each node links to `k / 2` neighbours on each
    /// side, with every lattice edge rewired with probability `p`.
    WattsStrogatz {
        n: usize,
        k: usize,
        p: f64,
    },
    BarabasiAlbert {
        n: usize,
        m: usize,
    },
    Complete {
        n: usize,
    },
}

impl TopologySpec {
    pub fn name(&self) -> &'static str {
        match self {
            TopologySpec::Tree { .. } => "tree",
            TopologySpec::Cycle { .. } => "cycle",
            TopologySpec::Grid { .. } => "grid",
            TopologySpec::Regular { .. } => "regular",
            TopologySpec::ErdosRenyi { .. } => "erdos_renyi",
            TopologySpec::WattsStrogatz { .. } => "watts_strogatz",
            TopologySpec::BarabasiAlbert { .. } => "barabasi_albert",
            TopologySpec::Complete { .. } => "complete",
        }
    }

    pub fn num_nodes(&self) -> usize {
        match *self {
            TopologySpec::Grid { rows, cols } => rows * cols,
            TopologySpec::Tree { n }
            | TopologySpec::Cycle { n }
            | TopologySpec::Regular { n, .. }
            | TopologySpec::ErdosRenyi { n, .. }
            | TopologySpec::WattsStrogatz { n, .. }
            | TopologySpec::BarabasiAlbert { n, .. }
            | TopologySpec::Complete { n } => n,
        }
    }

    /// Whether repeated draws can produce different topologies.
    pub fn is_random(&self) -> bool {
        matches!(
            self,
            TopologySpec::Tree { .. }
                | TopologySpec::Regular { .. }
                | TopologySpec::ErdosRenyi { .. }
                | TopologySpec::WattsStrogatz { .. }
                | TopologySpec::BarabasiAlbert { .. }
        )
    }

    /// The eight families at roughly twelve nodes used for structure sweeps.
    pub fn structure_sweep() -> Vec<TopologySpec> {
        vec![
            TopologySpec::Tree { n: 12 },
            TopologySpec::Cycle { n: 12 },
            TopologySpec::Grid { rows: 4, cols: 3 },
            TopologySpec::Regular { n: 12, degree: 3 },
            TopologySpec::ErdosRenyi { n: 12, p: 0.3 },
            TopologySpec::WattsStrogatz { n: 12, k: 4, p: 0.2 },
            TopologySpec::BarabasiAlbert { n: 12, m: 2 },
            TopologySpec::Complete { n: 12 },
        ]
    }
}

/// A simple undirected topology: node count plus unordered pairs `a < b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    pub n: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl Topology {
    fn from_set(n: usize, set: BTreeSet<(usize, usize)>) -> Self {
        Topology {
            n,
            pairs: set.into_iter().collect(),
        }
    }

    /// Bidirectional graph with per-pair `beta` (same in both directions)
    /// and per-node `gamma`.
    pub fn to_graph(&self, beta: &[f64], gamma: Vec<f64>) -> Result<Graph> {
        if beta.len() != self.pairs.len() {
            return Err(Error::LengthMismatch {
                field: "beta",
                expected: self.pairs.len(),
                got: beta.len(),
            });
        }
        let triples: Vec<_> = self.pairs.iter().zip(beta).map(|(&(a, b), &w)| (a, b, w)).collect();
        Graph::from_undirected(self.n, &triples, gamma)
    }

    fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.pairs {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }
}

fn pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn infeasible(msg: impl Into<String>) -> Error {
    Error::Infeasible(msg.into())
}

impl TopologySpec {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Topology> {
        match *self {
            TopologySpec::Tree { n } => tree(n, rng),
            TopologySpec::Cycle { n } => {
                if n < 3 {
                    return Err(infeasible("cycle needs at least 3 nodes"));
                }
                let set = (0..n).map(|i| pair(i, (i + 1) % n)).collect();
                Ok(Topology::from_set(n, set))
            }
            TopologySpec::Grid { rows, cols } => {
                if rows == 0 || cols == 0 {
                    return Err(infeasible("grid dimensions must be positive"));
                }
                let mut set = BTreeSet::new();
                for r in 0..rows {
                    for c in 0..cols {
                        let u = r * cols + c;
                        if c + 1 < cols {
                            set.insert((u, u + 1));
                        }
                        if r + 1 < rows {
                            set.insert((u, u + cols));
                        }
                    }
                }
                Ok(Topology::from_set(rows * cols, set))
            }
            TopologySpec::Regular { n, degree } => regular(n, degree, rng),
            TopologySpec::ErdosRenyi { n, p } => erdos_renyi(n, p, rng),
            TopologySpec::WattsStrogatz { n, k, p } => watts_strogatz(n, k, p, rng),
            TopologySpec::BarabasiAlbert { n, m } => barabasi_albert(n, m, rng),
            TopologySpec::Complete { n } => {
                if n == 0 {
                    return Err(infeasible("complete graph needs at least one node"));
                }
                let set = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
                Ok(Topology::from_set(n, set))
            }
        }
    }
}

/// Draws a connected topology and emits it as a bidirectional graph whose
/// rates are all zero; an instance sampler fills them in.
pub fn generate_graph<R: Rng + ?Sized>(spec: &TopologySpec, rng: &mut R) -> Result<Graph> {
    let topo = spec.sample(rng)?;
    topo.to_graph(&vec![0.0; topo.pairs.len()], vec![0.0; topo.n])
}

fn tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Topology> {
    match n {
        0 => Err(infeasible("tree needs at least one node")),
        1 => Ok(Topology { n, pairs: vec![] }),
        2 => Ok(Topology { n, pairs: vec![(0, 1)] }),
        _ => {
            // Prüfer decoding gives a uniform labelled tree.
            let code: Vec<usize> = (0..n - 2).map(|_| rng.gen_range(0..n)).collect();
            let mut degree = vec![1usize; n];
            for &c in &code {
                degree[c] += 1;
            }
            let mut set = BTreeSet::new();
            for &c in &code {
                let leaf = (0..n).find(|&v| degree[v] == 1).expect("a leaf always exists");
                set.insert(pair(leaf, c));
                degree[leaf] -= 1;
                degree[c] -= 1;
            }
            let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
            set.insert(pair(rest[0], rest[1]));
            Ok(Topology::from_set(n, set))
        }
    }
}

fn regular<R: Rng + ?Sized>(n: usize, degree: usize, rng: &mut R) -> Result<Topology> {
    if degree == 0 || degree >= n || !(n * degree).is_multiple_of(2) {
        return Err(infeasible(format!("no connected {degree}-regular graph on {n} nodes")));
    }
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, degree)).collect();
    'attempt: for _ in 0..MAX_ATTEMPTS {
        stubs.shuffle(rng);
        let mut set = BTreeSet::new();
        for chunk in stubs.chunks(2) {
            let (a, b) = (chunk[0], chunk[1]);
            if a == b || !set.insert(pair(a, b)) {
                continue 'attempt;
            }
        }
        let topo = Topology::from_set(n, set);
        if topo.is_connected() {
            return Ok(topo);
        }
    }
    Err(infeasible(format!(
        "failed to draw a simple connected {degree}-regular graph on {n} nodes"
    )))
}

fn erdos_renyi<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Topology> {
    if n == 0 || !(0.0..=1.0).contains(&p) || (n > 1 && p == 0.0) {
        return Err(infeasible(format!("erdos_renyi(n={n}, p={p})")));
    }
    for _ in 0..MAX_ATTEMPTS {
        let mut set = BTreeSet::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen::<f64>() < p {
                    set.insert((a, b));
                }
            }
        }
        let topo = Topology::from_set(n, set);
        if topo.is_connected() {
            return Ok(topo);
        }
    }
    Err(infeasible(format!(
        "erdos_renyi(n={n}, p={p}) never produced a connected graph"
    )))
}

fn watts_strogatz<R: Rng + ?Sized>(n: usize, k: usize, p: f64, rng: &mut R) -> Result<Topology> {
    let half = k / 2;
    if half == 0 || k >= n || !(0.0..=1.0).contains(&p) {
        return Err(infeasible(format!("watts_strogatz(n={n}, k={k}, p={p})")));
    }
    for _ in 0..MAX_ATTEMPTS {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for u in 0..n {
            for j in 1..=half {
                let v = (u + j) % n;
                adj[u].insert(v);
                adj[v].insert(u);
            }
        }
        for j in 1..=half {
            for u in 0..n {
                let v = (u + j) % n;
                if rng.gen::<f64>() < p && adj[u].contains(&v) && adj[u].len() < n - 1 {
                    let w = loop {
                        let w = rng.gen_range(0..n);
                        if w != u && !adj[u].contains(&w) {
                            break w;
                        }
                    };
                    adj[u].remove(&v);
                    adj[v].remove(&u);
                    adj[u].insert(w);
                    adj[w].insert(u);
                }
            }
        }
        let set = adj
            .iter()
            .enumerate()
            .flat_map(|(u, nb)| nb.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
            .collect();
        let topo = Topology::from_set(n, set);
        if topo.is_connected() {
            return Ok(topo);
        }
    }
    Err(infeasible(format!(
        "watts_strogatz(n={n}, k={k}, p={p}) never produced a connected graph"
    )))
}

fn barabasi_albert<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Topology> {
    if m == 0 || m >= n {
        return Err(infeasible(format!("barabasi_albert(n={n}, m={m})")));
    }
    let mut set = BTreeSet::new();
    let mut targets: Vec<usize> = (0..m).collect();
    let mut repeated: Vec<usize> = Vec::new();
    for source in m..n {
        for &t in &targets {
            set.insert(pair(source, t));
        }
        repeated.extend(&targets);
        repeated.extend(std::iter::repeat_n(source, m));
        let mut chosen = BTreeSet::new();
        while chosen.len() < m {
            chosen.insert(repeated[rng.gen_range(0..repeated.len())]);
        }
        targets = chosen.into_iter().collect();
    }
    Ok(Topology::from_set(n, set))
}
