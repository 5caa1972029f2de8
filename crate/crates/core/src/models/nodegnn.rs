use rand::Rng;

use super::{GraphIndex, Trace};
use crate::error::Result;
use crate::graph::Instance;
use crate::neural::{Gru, GruSpec, Matrix, Mlp, MlpSpec, OutputActivation, ParamStore, Tape};

/// Baseline recurrent GNN on the original graph. Nodes carry
/// (seed indicator, recovery rate), edges carry the transmission rate; each
/// step emits a softmax over (S, I, R) per node.
#[derive(Clone, Debug)]
pub struct NodeGnn {
    node_embed: Mlp,
    edge_embed: Mlp,
    init: Mlp,
    message: Mlp,
    aggregate: Mlp,
    update_input: Mlp,
    gru: Gru,
    readout: Mlp,
}

impl NodeGnn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hidden: usize, rng: &mut R) -> Result<Self> {
        let d = hidden;
        let mlp = |i, o| MlpSpec::two_layer(i, d, o, OutputActivation::Identity);
        Ok(NodeGnn {
            node_embed: Mlp::new(store, "nodegnn.node_embed", mlp(2, d), rng)?,
            edge_embed: Mlp::new(store, "nodegnn.edge_embed", mlp(1, d), rng)?,
            init: Mlp::new(store, "nodegnn.init", mlp(d, d), rng)?,
            message: Mlp::new(store, "nodegnn.message", mlp(2 * d, d), rng)?,
            aggregate: Mlp::new(store, "nodegnn.aggregate", mlp(d, d), rng)?,
            update_input: Mlp::new(store, "nodegnn.update_input", mlp(2 * d, d), rng)?,
            gru: Gru::new(store, "nodegnn.gru", GruSpec { input: d, state: d }, rng)?,
            readout: Mlp::new(
                store,
                "nodegnn.readout",
                MlpSpec::two_layer(2 * d, d, 3, OutputActivation::Softmax),
                rng,
            )?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inst: &Instance, index: &GraphIndex) -> Result<Trace> {
        let g = &inst.graph;
        let attrs = Matrix::from_rows(
            &(0..g.n())
                .map(|i| vec![if inst.is_seed(i) { 1.0 } else { 0.0 }, g.gamma()[i]])
                .collect::<Vec<_>>(),
        )?;
        let attrs = if g.n() == 0 { Matrix::zeros(0, 2) } else { attrs };
        let attrs = tape.constant(attrs);
        let beta = tape.constant(Matrix::column(g.beta().to_vec()));
        let x0 = self.node_embed.forward(tape, store, attrs)?;
        let e0 = self.edge_embed.forward(tape, store, beta)?;
        let mut m = self.init.forward(tape, store, x0)?;

        let initial = crate::MarginalTrajectory::initial(0, g.n(), inst.seeds());
        let ps0 = tape.constant(Matrix::column(initial.ps[0].clone()));
        let pi0 = tape.constant(Matrix::column(initial.pi[0].clone()));
        let pr0 = tape.constant(Matrix::column(initial.pr[0].clone()));
        let mut trace = Trace::start(ps0, pi0, pr0);

        for _ in 0..inst.horizon() {
            let from = tape.gather(m, index.src.clone());
            let joined = tape.concat(&[from, e0]);
            let msg = self.message.forward(tape, store, joined)?;
            let summed = tape.segment_sum(msg, index.node_in.clone());
            let agg = self.aggregate.forward(tape, store, summed)?;
            let with_attrs = tape.concat(&[agg, x0]);
            let input = self.update_input.forward(tape, store, with_attrs)?;
            m = self.gru.forward(tape, store, input, m)?;
            let state = tape.concat(&[m, x0]);
            let p = self.readout.forward(tape, store, state)?;
            let (ps, pi, pr) = (tape.column(p, 0), tape.column(p, 1), tape.column(p, 2));
            trace.push(ps, pi, pr);
        }
        Ok(trace)
    }
}
