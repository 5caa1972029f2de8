use rand::Rng;

use super::GraphIndex;
use crate::error::Result;
use crate::neural::{Gru, GruSpec, Matrix, Mlp, MlpSpec, OutputActivation, ParamStore, Tape, Var};

/// Recurrent GNN on the non-backtracking line graph: one hidden state per
/// directed edge, scalar input per edge.
#[derive(Clone, Debug)]
pub struct LineGnn {
    embed: Mlp,
    message: Mlp,
    aggregate: Mlp,
    gru: Gru,
    hidden: usize,
}

/// Tape values produced by one [`LineGnn::step`].
#[derive(Clone, Copy, Debug)]
pub struct LineGnnStep {
    /// Per-edge message, `E x D`.
    pub messages: Var,
    /// Per-edge transformed sum of incoming non-backtracking messages.
    pub aggregated: Var,
    /// Per-node sum of messages on incoming edges, `n x D`.
    pub node_sum: Var,
    pub next_hidden: Var,
}

impl LineGnn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = |i| MlpSpec::two_layer(i, hidden, hidden, OutputActivation::Identity);
        Ok(LineGnn {
            embed: Mlp::new(store, &format!("{prefix}.embed"), mlp(input), rng)?,
            message: Mlp::new(store, &format!("{prefix}.message"), mlp(2 * hidden), rng)?,
            aggregate: Mlp::new(store, &format!("{prefix}.aggregate"), mlp(hidden), rng)?,
            gru: Gru::new(
                store,
                &format!("{prefix}.gru"),
                GruSpec {
                    input: hidden,
                    state: hidden,
                },
                rng,
            )?,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Initial hidden state: the embedding of the initial inputs.
    pub fn init_hidden(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.embed.forward(tape, store, x)
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, index: &GraphIndex, x: Var, h: Var) -> Result<LineGnnStep> {
        let e = self.embed.forward(tape, store, x)?;
        let joined = tape.concat(&[h, e]);
        let messages = self.message.forward(tape, store, joined)?;
        let incoming = tape.segment_sum(messages, index.in_arcs.clone());
        let aggregated = self.aggregate.forward(tape, store, incoming)?;
        let node_sum = tape.segment_sum(messages, index.node_in.clone());
        let next_hidden = self.gru.forward(tape, store, aggregated, h)?;
        Ok(LineGnnStep {
            messages,
            aggregated,
            node_sum,
            next_hidden,
        })
    }
}

/// One untracked step on plain matrices: returns messages, aggregated
/// messages and the next hidden state.
pub fn linegnn_step(
    gnn: &LineGnn,
    store: &ParamStore,
    index: &GraphIndex,
    x: &Matrix,
    h: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h.clone());
    let s = gnn.step(&mut tape, store, index, xv, hv)?;
    Ok((
        tape.value(s.messages).clone(),
        tape.value(s.aggregated).clone(),
        tape.value(s.next_hidden).clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(g: &Graph) -> (ParamStore, LineGnn, GraphIndex) {
        let mut store = ParamStore::new();
        let gnn = LineGnn::new(&mut store, "gnn", 1, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (store, gnn, GraphIndex::new(g))
    }

    fn inputs(g: &Graph, hidden: usize) -> (Matrix, Matrix) {
        let e = g.num_edges();
        let x = Matrix::column((0..e).map(|k| 0.2 + 0.05 * k as f64).collect());
        let h = Matrix::from_vec(
            e,
            hidden,
            (0..e * hidden).map(|k| ((k * 13) % 7) as f64 / 7.0 - 0.4).collect(),
        )
        .unwrap();
        (x, h)
    }

    fn aggregate_of_zero(gnn: &LineGnn, store: &ParamStore) -> Vec<f64> {
        gnn.aggregate
            .eval(store, &Matrix::zeros(1, gnn.hidden()))
            .unwrap()
            .into_data()
    }

    #[test]
    fn two_node_graph_aggregates_empty_sums() {
        let g = Graph::from_undirected(2, &[(0, 1, 0.5)], vec![0.5; 2]).unwrap();
        let (store, gnn, index) = setup(&g);
        let (x, h) = inputs(&g, 8);
        let (_, agg, _) = linegnn_step(&gnn, &store, &index, &x, &h).unwrap();
        let expected = aggregate_of_zero(&gnn, &store);
        for r in 0..agg.rows() {
            assert_eq!(agg.row(r), expected.as_slice());
        }
    }

    #[test]
    fn diamond_aggregation_uses_non_backtracking_arcs() {
        let g = Graph::from_undirected(4, &[(0, 1, 0.5), (0, 2, 0.5), (1, 3, 0.5), (2, 3, 0.5)], vec![0.5; 4]).unwrap();
        let (store, gnn, index) = setup(&g);
        let (x, h) = inputs(&g, 8);
        let (messages, agg, _) = linegnn_step(&gnn, &store, &index, &x, &h).unwrap();
        let e13 = g.find_edge(1, 3).unwrap();
        let e01 = g.find_edge(0, 1).unwrap();
        // (1 -> 3) is fed only by (0 -> 1); (3 -> 1) would backtrack.
        let sum = Matrix::from_vec(1, 8, messages.row(e01).to_vec()).unwrap();
        let expected = gnn.aggregate.eval(&store, &sum).unwrap();
        for (a, b) in agg.row(e13).iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // (0 -> 1) is fed only by (2 -> 0).
        let e20 = g.find_edge(2, 0).unwrap();
        let sum = Matrix::from_vec(1, 8, messages.row(e20).to_vec()).unwrap();
        let expected = gnn.aggregate.eval(&store, &sum).unwrap();
        for (a, b) in agg.row(e01).iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn node_sum_collects_every_incoming_edge() {
        let g = Graph::from_undirected(3, &[(0, 1, 0.5), (1, 2, 0.5)], vec![0.5; 3]).unwrap();
        let (store, gnn, index) = setup(&g);
        let (x, h) = inputs(&g, 8);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let hv = tape.constant(h);
        let s = gnn.step(&mut tape, &store, &index, xv, hv).unwrap();
        let msgs = tape.value(s.messages);
        let sums = tape.value(s.node_sum);
        let (a, b) = (g.find_edge(0, 1).unwrap(), g.find_edge(2, 1).unwrap());
        for c in 0..8 {
            assert!((sums.get(1, c) - msgs.get(a, c) - msgs.get(b, c)).abs() < 1e-12);
        }
    }
}
