use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Graph, Topology};
use crate::error::{Error, Result};
use crate::trajectory::MarginalTrajectory;

/// A marginal-inference problem: a diffusion network, the initially
/// infected seed set, the horizon `T` and optional ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub graph: Graph,
    seeds: Vec<usize>,
    horizon: usize,
    pub labels: Option<MarginalTrajectory>,
}

impl Instance {
    pub fn new(graph: Graph, seeds: Vec<usize>, horizon: usize) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::invalid("seeds", "seed set must be nonempty"));
        }
        Instance::with_any_seeds(graph, seeds, horizon)
    }

    /// Like [`Instance::new`] but also accepts an empty seed set; the
    /// message-passing engines are well-defined there and tests rely on it.
    pub fn with_any_seeds(graph: Graph, mut seeds: Vec<usize>, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("T", "horizon must be at least 1"));
        }
        if let Some(&bad) = seeds.iter().find(|&&s| s >= graph.n()) {
            return Err(Error::invalid(
                "seeds",
                format!("seed {bad} out of range for {} nodes", graph.n()),
            ));
        }
        seeds.sort_unstable();
        seeds.dedup();
        Ok(Instance {
            graph,
            seeds,
            horizon,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: MarginalTrajectory) -> Result<Self> {
        labels.check_shape("labels", self.horizon, self.graph.n())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn seeds(&self) -> &[usize] {
        &self.seeds
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn is_seed(&self, node: usize) -> bool {
        self.seeds.binary_search(&node).is_ok()
    }

    /// Same problem with a different horizon; labels are dropped.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Instance::with_any_seeds(self.graph.clone(), self.seeds.clone(), horizon)
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let graph = self.graph.permuted(perm)?;
        let seeds = self.seeds.iter().map(|&s| perm[s]).collect();
        let mut out = Instance::with_any_seeds(graph, seeds, self.horizon)?;
        out.labels = self.labels.as_ref().map(|l| l.permuted(perm));
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    gamma: Vec<f64>,
    seeds: Vec<usize>,
    #[serde(rename = "T")]
    horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<MarginalTrajectory>,
}

pub fn load_instance(text: &str) -> Result<Instance> {
    let doc: InstanceDoc = serde_json::from_str(text)?;
    let graph = Graph::new(doc.n, &doc.edges, doc.gamma)?;
    let inst = Instance::new(graph, doc.seeds, doc.horizon)?;
    match doc.labels {
        Some(labels) => inst.with_labels(labels),
        None => Ok(inst),
    }
}

pub fn save_instance(inst: &Instance) -> String {
    let g = &inst.graph;
    let doc = InstanceDoc {
        n: g.n(),
        edges: g
            .edges()
            .iter()
            .zip(g.beta())
            .map(|(e, &b)| (e.src, e.dst, b))
            .collect(),
        gamma: g.gamma().to_vec(),
        seeds: inst.seeds.clone(),
        horizon: inst.horizon,
        labels: inst.labels.clone(),
    };
    serde_json::to_string(&doc).expect("instance document serializes")
}

/// Parses a whitespace-separated `src dst` edge list (`#` starts a comment)
/// as an undirected topology. Node labels are compacted to `0..n` in
/// ascending label order; self-loops and repeated pairs are dropped.
/// Returns the topology and the original label of each node.
pub fn read_edge_list(text: &str) -> Result<(Topology, Vec<u64>)> {
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = || -> Result<u64> {
            it.next()
                .ok_or_else(|| Error::Parse(format!("line {}: expected `src dst`", lineno + 1)))?
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: node ids must be integers", lineno + 1)))
        };
        let (a, b) = (next()?, next()?);
        raw.push((a, b));
    }
    let labels: BTreeSet<u64> = raw.iter().flat_map(|&(a, b)| [a, b]).collect();
    let index: BTreeMap<u64, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let pairs: BTreeSet<(usize, usize)> = raw
        .into_iter()
        .filter(|(a, b)| a != b)
        .map(|(a, b)| {
            let (x, y) = (index[&a], index[&b]);
            (x.min(y), x.max(y))
        })
        .collect();
    Ok((
        Topology {
            n: labels.len(),
            pairs: pairs.into_iter().collect(),
        },
        labels.into_iter().collect(),
    ))
}
