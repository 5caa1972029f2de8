use rand::Rng;

use super::{GraphIndex, Trace};
use crate::error::Result;
use crate::graph::Instance;
use crate::neural::{Matrix, Mlp, MlpSpec, OutputActivation, ParamStore, Tape, Var};

use super::linegnn::LineGnn;

/// Initial logit of the scale and shift heads: the untrained readout
/// starts close to the identity refinement (scale ~ 1, shift ~ 0).
const READOUT_BIAS: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refinement {
    /// Scale and shift come from the GNN readout.
    Learned,
    /// Scale 1, shift 0: the GNN is bypassed and the recursion is plain DMP.
    Identity,
}

/// DMP with learned affine corrections of the node and cavity
/// susceptibilities, produced by a line-graph GNN fed with `theta`.
#[derive(Clone, Debug)]
pub struct Nedmp {
    gnn: LineGnn,
    readout: Mlp,
}

/// Per-instance inputs of the recursion as tape-ready columns.
struct Constants {
    beta: Matrix,
    gamma: Matrix,
    decay: Matrix,
    ps0: Matrix,
    ps0_src: Matrix,
    phi0: Matrix,
}

impl Constants {
    fn new(inst: &Instance) -> Self {
        let g = &inst.graph;
        let ps0: Vec<f64> = (0..g.n()).map(|i| if inst.is_seed(i) { 0.0 } else { 1.0 }).collect();
        let src: Vec<usize> = g.edges().iter().map(|e| e.src).collect();
        Constants {
            beta: Matrix::column(g.beta().to_vec()),
            gamma: Matrix::column(g.gamma().to_vec()),
            decay: Matrix::column(
                src.iter()
                    .zip(g.beta())
                    .map(|(&j, &b)| (1.0 - b) * (1.0 - g.gamma()[j]))
                    .collect(),
            ),
            ps0_src: Matrix::column(src.iter().map(|&j| ps0[j]).collect()),
            phi0: Matrix::column(src.iter().map(|&j| 1.0 - ps0[j]).collect()),
            ps0: Matrix::column(ps0),
        }
    }
}

impl Nedmp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hidden: usize, rng: &mut R) -> Result<Self> {
        let gnn = LineGnn::new(store, "nedmp.gnn", 1, hidden, rng)?;
        let readout = Mlp::new(
            store,
            "nedmp.readout",
            MlpSpec::two_layer(1 + hidden, hidden, 2, OutputActivation::Sigmoid),
            rng,
        )?;
        store.value_mut(readout.output_weight()).fill(0.0);
        store
            .value_mut(readout.output_bias())
            .data_mut()
            .copy_from_slice(&[READOUT_BIAS, -READOUT_BIAS]);
        Ok(Nedmp { gnn, readout })
    }

    /// `(scale, shift)` columns for raw susceptibilities `raw` given the
    /// matching GNN summaries.
    fn refine(&self, tape: &mut Tape, store: &ParamStore, raw: Var, summary: Var) -> Result<(Var, Var)> {
        let joined = tape.concat(&[raw, summary]);
        let out = self.readout.forward(tape, store, joined)?;
        Ok((tape.column(out, 0), tape.column(out, 1)))
    }

    /// Records the full unrolled recursion for `inst` on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inst: &Instance,
        index: &GraphIndex,
        mode: Refinement,
    ) -> Result<Trace> {
        let c = Constants::new(inst);
        let beta = tape.constant(c.beta);
        let gamma = tape.constant(c.gamma);
        let decay = tape.constant(c.decay);
        let ps0 = tape.constant(c.ps0.clone());
        let ps0_src = tape.constant(c.ps0_src.clone());

        let mut theta = tape.constant(Matrix::filled(inst.graph.num_edges(), 1, 1.0));
        let mut phi = tape.constant(c.phi0);
        let mut cavity = ps0_src;
        let mut ps = ps0;
        let mut pi = tape.one_minus(ps0);
        let mut pr = tape.constant(Matrix::zeros(inst.n(), 1));
        let mut hidden = match mode {
            Refinement::Learned => Some(self.gnn.init_hidden(tape, store, theta)?),
            Refinement::Identity => None,
        };
        let mut trace = Trace::start(ps, pi, pr);

        for _ in 0..inst.horizon() {
            let flow = tape.mul(beta, phi);
            theta = tape.sub(theta, flow);
            let prod_node = tape.segment_prod(theta, index.node_in.clone());
            let raw_node = tape.mul(ps0, prod_node);
            let prod_cav = tape.segment_prod(theta, index.in_arcs.clone());
            let raw_cav = tape.mul(ps0_src, prod_cav);

            let (node_s, cav_s) = match hidden {
                Some(h) => {
                    let step = self.gnn.step(tape, store, index, theta, h)?;
                    let (scale_n, shift_n) = self.refine(tape, store, raw_node, step.node_sum)?;
                    let (scale_e, shift_e) = self.refine(tape, store, raw_cav, step.aggregated)?;
                    trace.refinements.push([scale_n, shift_n, scale_e, shift_e]);
                    hidden = Some(step.next_hidden);
                    let scaled_n = tape.mul(raw_node, scale_n);
                    let scaled_e = tape.mul(raw_cav, scale_e);
                    (tape.add(scaled_n, shift_n), tape.add(scaled_e, shift_e))
                }
                None => (raw_node, raw_cav),
            };

            let recovered = tape.mul(gamma, pi);
            pr = tape.add(pr, recovered);
            let room = tape.one_minus(pr);
            let bounded = tape.clamp(node_s, 0.0, 1.0);
            ps = tape.min(bounded, room);
            pi = tape.sub(room, ps);

            let next_cavity = tape.clamp(cav_s, 0.0, 1.0);
            let kept = tape.mul(decay, phi);
            let drop = tape.sub(cavity, next_cavity);
            phi = tape.add(kept, drop);
            cavity = next_cavity;

            trace.push(ps, pi, pr);
        }
        Ok(trace)
    }
}
