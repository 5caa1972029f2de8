//! Trainable marginal predictors.
//!
//! * [`NodeGnn`]: a recurrent GNN on the original graph with a softmax
//!   readout per node and step.
//! * [`Nedmp`]: DMP whose node and cavity susceptibilities are corrected
//!   at every step by a GNN running on the line graph.
//!
//! Both record their unrolled forward pass on a [`Tape`] and return a
//! [`Trace`] of per-step marginal columns, so the same code serves
//! inference and training.

mod linegnn;
mod nedmp;
mod nodegnn;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use linegnn::{linegnn_step, LineGnn, LineGnnStep};
pub use nedmp::{Nedmp, Refinement};
pub use nodegnn::NodeGnn;

use crate::error::{Error, Result};
use crate::graph::{Graph, Instance, LineGraph};
use crate::neural::{Checkpoint, ParamStore, Segments, Tape, Var};
use crate::trajectory::MarginalTrajectory;

/// Index lists the models gather and aggregate over.
#[derive(Clone, Debug)]
pub struct GraphIndex {
    /// Source node of every directed edge.
    pub src: Arc<Vec<usize>>,
    /// Incoming edges of every node.
    pub node_in: Segments,
    /// Non-backtracking incoming line-graph arcs of every directed edge.
    pub in_arcs: Segments,
}

impl GraphIndex {
    pub fn new(g: &Graph) -> Self {
        let lg = LineGraph::new(g);
        GraphIndex {
            src: Arc::new(g.edges().iter().map(|e| e.src).collect()),
            node_in: Arc::new(lg.all_node_incoming().to_vec()),
            in_arcs: Arc::new(lg.all_in_arcs().to_vec()),
        }
    }
}

/// Per-step `n x 1` marginal columns recorded on a tape, `t = 0..=T`.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub ps: Vec<Var>,
    pub pi: Vec<Var>,
    pub pr: Vec<Var>,
    /// NEDMP only, one entry per step `t >= 1`: node scale, node shift,
    /// cavity scale, cavity shift.
    pub refinements: Vec<[Var; 4]>,
}

impl Trace {
    pub(crate) fn start(ps: Var, pi: Var, pr: Var) -> Self {
        Trace {
            ps: vec![ps],
            pi: vec![pi],
            pr: vec![pr],
            refinements: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, ps: Var, pi: Var, pr: Var) {
        self.ps.push(ps);
        self.pi.push(pi);
        self.pr.push(pr);
    }

    pub fn horizon(&self) -> usize {
        self.ps.len() - 1
    }

    pub fn values(&self, tape: &Tape) -> MarginalTrajectory {
        let col = |v: &Var| tape.value(*v).data().to_vec();
        MarginalTrajectory {
            ps: self.ps.iter().map(col).collect(),
            pi: self.pi.iter().map(col).collect(),
            pr: self.pr.iter().map(col).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    NodeGnn,
    Nedmp,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::NodeGnn => "nodegnn",
            ModelKind::Nedmp => "nedmp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nodegnn" | "gnn" => Ok(ModelKind::NodeGnn),
            "nedmp" => Ok(ModelKind::Nedmp),
            other => Err(Error::Parse(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Width of every hidden state and MLP hidden layer.
    pub hidden: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { hidden: 32 }
    }
}

#[derive(Clone, Debug)]
enum Net {
    NodeGnn(NodeGnn),
    Nedmp(Nedmp),
}

/// A model architecture together with its weights.
#[derive(Clone, Debug)]
pub struct Model {
    kind: ModelKind,
    spec: ModelSpec,
    seed: u64,
    net: Net,
    store: ParamStore,
}

impl Model {
    /// Fresh weights drawn from `seed`.
    pub fn new(kind: ModelKind, spec: ModelSpec, seed: u64) -> Result<Self> {
        if spec.hidden == 0 {
            return Err(Error::invalid("hidden", "must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = match kind {
            ModelKind::NodeGnn => Net::NodeGnn(NodeGnn::new(&mut store, spec.hidden, &mut rng)?),
            ModelKind::Nedmp => Net::Nedmp(Nedmp::new(&mut store, spec.hidden, &mut rng)?),
        };
        Ok(Model {
            kind,
            spec,
            seed,
            net,
            store,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Records the forward pass for `inst` on `tape`.
    pub fn forward(&self, tape: &mut Tape, inst: &Instance, index: &GraphIndex) -> Result<Trace> {
        match &self.net {
            Net::NodeGnn(m) => m.forward(tape, &self.store, inst, index),
            Net::Nedmp(m) => m.forward(tape, &self.store, inst, index, Refinement::Learned),
        }
    }

    pub fn predict(&self, inst: &Instance) -> Result<MarginalTrajectory> {
        let mut tape = Tape::new();
        let trace = self.forward(&mut tape, inst, &GraphIndex::new(&inst.graph))?;
        let out = trace.values(&tape);
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("{} prediction", self.kind)));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_kind: self.kind.as_str().to_string(),
            seed: self.seed,
            spec: serde_json::to_value(self.spec).expect("spec serializes"),
            params: self.store.to_entries(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let kind: ModelKind = ckpt
            .model_kind
            .parse()
            .map_err(|_| Error::Checkpoint(format!("unknown model_kind {:?}", ckpt.model_kind)))?;
        let spec: ModelSpec =
            serde_json::from_value(ckpt.spec.clone()).map_err(|e| Error::Checkpoint(format!("spec: {e}")))?;
        let mut model = Model::new(kind, spec, ckpt.seed)?;
        model.store.load_entries(&ckpt.params)?;
        Ok(model)
    }
}

/// NEDMP marginals with the weights in `model`. With
/// [`Refinement::Identity`] the weights are ignored and the result is DMP.
pub fn nedmp_run(inst: &Instance, model: &Model, mode: Refinement) -> Result<MarginalTrajectory> {
    let Net::Nedmp(net) = &model.net else {
        return Err(Error::Checkpoint(format!("expected a nedmp model, got {}", model.kind)));
    };
    let mut tape = Tape::new();
    let trace = net.forward(&mut tape, &model.store, inst, &GraphIndex::new(&inst.graph), mode)?;
    Ok(trace.values(&tape))
}

pub fn nodegnn_run(inst: &Instance, model: &Model) -> Result<MarginalTrajectory> {
    if model.kind != ModelKind::NodeGnn {
        return Err(Error::Checkpoint(format!(
            "expected a nodegnn model, got {}",
            model.kind
        )));
    }
    model.predict(inst)
}
