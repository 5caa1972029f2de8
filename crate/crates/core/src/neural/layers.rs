use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    Softmax,
}

/// Fully connected network with ReLU between layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    /// One hidden layer of width `hidden`.
    pub fn two_layer(input: usize, hidden: usize, output: usize, output_activation: OutputActivation) -> Self {
        MlpSpec {
            input,
            hidden: vec![hidden],
            output,
            output_activation,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid(
                "mlp",
                format!("all dimensions must be positive: {self:?}"),
            ));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input];
        d.extend(&self.hidden);
        d.push(self.output);
        d
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers `{name}.w{k}` / `{name}.b{k}` in `store`: Glorot-uniform
    /// weights, zero biases.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let dims = spec.dims();
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let weight = store.add_glorot(format!("{name}.w{k}"), w[0], w[1], rng);
                let bias = store.add(format!("{name}.b{k}"), Matrix::zeros(1, w[1]));
                (weight, bias)
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn output_bias(&self) -> ParamId {
        self.layers.last().expect("at least one layer").1
    }

    pub fn output_weight(&self) -> ParamId {
        self.layers.last().expect("at least one layer").0
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (_, width) = tape.shape(x);
        if width != self.spec.input {
            return Err(Error::Shape {
                op: "mlp_forward",
                lhs: tape.shape(x),
                rhs: (self.spec.input, 0),
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let z = tape.matmul(h, wv);
            h = tape.add_row(z, bv);
            if k < last {
                h = tape.relu(h);
            }
        }
        Ok(match self.spec.output_activation {
            OutputActivation::Identity => h,
            OutputActivation::Sigmoid => tape.sigmoid(h),
            OutputActivation::Softmax => tape.softmax(h),
        })
    }

    /// Untracked forward pass over a batch of rows.
    pub fn eval(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, store, xv)?;
        Ok(tape.value(y).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruSpec {
    pub input: usize,
    pub state: usize,
}

/// Gated recurrent unit over batches of rows:
///
/// ```text
/// z  = sigmoid(x W_z + h U_z + b_z)
/// r  = sigmoid(x W_r + h U_r + b_r)
/// h~ = tanh(x W_h + (r * h) U_h + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    spec: GruSpec,
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: GruSpec, rng: &mut R) -> Result<Self> {
        if spec.input == 0 || spec.state == 0 {
            return Err(Error::invalid(
                "gru",
                format!("all dimensions must be positive: {spec:?}"),
            ));
        }
        let gates = ["z", "r", "h"];
        let w = gates.map(|g| store.add_glorot(format!("{name}.w_{g}"), spec.input, spec.state, rng));
        let u = gates.map(|g| store.add_glorot(format!("{name}.u_{g}"), spec.state, spec.state, rng));
        let b = gates.map(|g| store.add(format!("{name}.b_{g}"), Matrix::zeros(1, spec.state)));
        Ok(Gru { spec, w, u, b })
    }

    pub fn spec(&self) -> GruSpec {
        self.spec
    }

    fn gate(&self, tape: &mut Tape, store: &ParamStore, k: usize, x: Var, h: Var) -> Var {
        let w = tape.param(store, self.w[k]);
        let u = tape.param(store, self.u[k]);
        let b = tape.param(store, self.b[k]);
        let xw = tape.matmul(x, w);
        let hu = tape.matmul(h, u);
        let s = tape.add(xw, hu);
        tape.add_row(s, b)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let (xs, hs) = (tape.shape(x), tape.shape(h));
        if xs.1 != self.spec.input || hs.1 != self.spec.state || xs.0 != hs.0 {
            return Err(Error::Shape {
                op: "gru_forward",
                lhs: xs,
                rhs: hs,
            });
        }
        let z = self.gate(tape, store, 0, x, h);
        let z = tape.sigmoid(z);
        let r = self.gate(tape, store, 1, x, h);
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h);
        let cand = self.gate(tape, store, 2, x, rh);
        let cand = tape.tanh(cand);
        let keep = tape.one_minus(z);
        let old = tape.mul(keep, h);
        let new = tape.mul(z, cand);
        Ok(tape.add(old, new))
    }

    pub fn eval(&self, store: &ParamStore, x: &Matrix, h: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let hv = tape.constant(h.clone());
        let out = self.forward(&mut tape, store, xv, hv)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tape::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    fn zero_all(store: &mut ParamStore) {
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "f",
            MlpSpec::two_layer(3, 4, 2, OutputActivation::Identity),
            &mut rng(),
        )
        .unwrap();
        zero_all(&mut store);
        store
            .value_mut(mlp.output_bias())
            .data_mut()
            .copy_from_slice(&[0.25, -2.0]);
        let y = mlp.eval(&store, &Matrix::filled(2, 3, 5.0)).unwrap();
        assert_eq!(y.row(0), &[0.25, -2.0]);
        assert_eq!(y.row(1), &[0.25, -2.0]);
    }

    #[test]
    fn softmax_of_equal_logits() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "f",
            MlpSpec::two_layer(2, 4, 3, OutputActivation::Softmax),
            &mut rng(),
        )
        .unwrap();
        zero_all(&mut store);
        let y = mlp.eval(&store, &Matrix::filled(1, 2, 1.0)).unwrap();
        for k in 0..3 {
            assert!((y.get(0, k) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_hand_computed_chain() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::two_layer(3, 5, 2, OutputActivation::Sigmoid);
        let mlp = Mlp::new(&mut store, "f", spec, &mut rng()).unwrap();
        let ids: Vec<_> = store.ids().collect();
        for (k, &id) in ids.iter().enumerate() {
            let m = store.value_mut(id);
            for (j, v) in m.data_mut().iter_mut().enumerate() {
                *v = ((k * 31 + j * 7) % 11) as f64 / 11.0 - 0.45;
            }
        }
        let x = [0.3, -1.1, 0.8];
        let (w0, b0, w1, b1) = (
            store.value(ids[0]).clone(),
            store.value(ids[1]).clone(),
            store.value(ids[2]).clone(),
            store.value(ids[3]).clone(),
        );
        let mut hidden = [0.0; 5];
        for (j, hj) in hidden.iter_mut().enumerate() {
            let mut s = b0.get(0, j);
            for (i, xi) in x.iter().enumerate() {
                s += xi * w0.get(i, j);
            }
            *hj = s.max(0.0);
        }
        let y = mlp.eval(&store, &Matrix::from_vec(1, 3, x.to_vec()).unwrap()).unwrap();
        for k in 0..2 {
            let mut s = b1.get(0, k);
            for (j, hj) in hidden.iter().enumerate() {
                s += hj * w1.get(j, k);
            }
            assert!((y.get(0, k) - sigmoid(s)).abs() < 1e-14);
            assert!(y.get(0, k) > 0.0 && y.get(0, k) < 1.0);
        }
    }

    #[test]
    fn mlp_rejects_wrong_width() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "f",
            MlpSpec::two_layer(3, 4, 2, OutputActivation::Identity),
            &mut rng(),
        )
        .unwrap();
        assert!(matches!(
            mlp.eval(&store, &Matrix::zeros(1, 2)),
            Err(Error::Shape { .. })
        ));
        let bad = MlpSpec::two_layer(0, 4, 2, OutputActivation::Identity);
        assert!(Mlp::new(&mut store, "g", bad, &mut rng()).is_err());
    }

    #[test]
    fn gru_zero_weights_halves_state() {
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "gru", GruSpec { input: 2, state: 3 }, &mut rng()).unwrap();
        zero_all(&mut store);
        let h = Matrix::from_vec(1, 3, vec![0.4, -1.0, 2.0]).unwrap();
        let out = gru.eval(&store, &Matrix::filled(1, 2, 0.7), &h).unwrap();
        assert_eq!(out.data(), &[0.2, -0.5, 1.0]);
    }

    #[test]
    fn gru_zero_input_and_state() {
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "gru", GruSpec { input: 2, state: 3 }, &mut rng()).unwrap();
        let out = gru.eval(&store, &Matrix::zeros(1, 2), &Matrix::zeros(1, 3)).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gru_matches_gate_equations() {
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "gru", GruSpec { input: 2, state: 2 }, &mut rng()).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).contains(".b_") {
                store.value_mut(id).data_mut().copy_from_slice(&[0.1, -0.2]);
            }
        }
        let get = |name: &str| store.value(store.id(name).unwrap()).clone();
        let (wz, wr, wh) = (get("gru.w_z"), get("gru.w_r"), get("gru.w_h"));
        let (uz, ur, uh) = (get("gru.u_z"), get("gru.u_r"), get("gru.u_h"));
        let b = [0.1, -0.2];
        let x = [0.5, -0.3];
        let h = [0.8, 0.1];
        let lin = |w: &Matrix, u: &Matrix, v: &[f64; 2], k: usize| {
            b[k] + x[0] * w.get(0, k) + x[1] * w.get(1, k) + v[0] * u.get(0, k) + v[1] * u.get(1, k)
        };
        let z = [sigmoid(lin(&wz, &uz, &h, 0)), sigmoid(lin(&wz, &uz, &h, 1))];
        let r = [sigmoid(lin(&wr, &ur, &h, 0)), sigmoid(lin(&wr, &ur, &h, 1))];
        let rh = [r[0] * h[0], r[1] * h[1]];
        let cand = [lin(&wh, &uh, &rh, 0).tanh(), lin(&wh, &uh, &rh, 1).tanh()];
        let expected = [
            (1.0 - z[0]) * h[0] + z[0] * cand[0],
            (1.0 - z[1]) * h[1] + z[1] * cand[1],
        ];
        let out = gru
            .eval(
                &store,
                &Matrix::from_vec(1, 2, x.to_vec()).unwrap(),
                &Matrix::from_vec(1, 2, h.to_vec()).unwrap(),
            )
            .unwrap();
        for k in 0..2 {
            assert!((out.get(0, k) - expected[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn gru_rejects_mismatched_dims() {
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "gru", GruSpec { input: 2, state: 3 }, &mut rng()).unwrap();
        assert!(gru.eval(&store, &Matrix::zeros(1, 3), &Matrix::zeros(1, 3)).is_err());
        assert!(gru.eval(&store, &Matrix::zeros(2, 2), &Matrix::zeros(1, 3)).is_err());
    }
}
