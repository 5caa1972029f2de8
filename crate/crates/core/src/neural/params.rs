use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named trainable arrays with matching gradient accumulators, iterated in
/// insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.names.len();
        self.index.insert(name.clone(), id);
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name);
        ParamId(id)
    }

    /// Glorot-uniform weight matrix of shape `fan_in x fan_out`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add(name, Matrix::from_vec(fan_in, fan_out, data).expect("sized"))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Matrix) {
        self.grads[id.0].add_assign(g);
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.data().len()).sum()
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.data().iter().all(|x| x.is_finite()))
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        self.check_compatible(&other.shapes())?;
        for (i, name) in self.names.iter().enumerate() {
            self.values[i] = other.values[other.index[name]].clone();
        }
        Ok(())
    }

    pub fn shapes(&self) -> BTreeMap<String, (usize, usize)> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| (n.clone(), v.shape()))
            .collect()
    }

    fn check_compatible(&self, shapes: &BTreeMap<String, (usize, usize)>) -> Result<()> {
        let mine = self.shapes();
        if let Some(missing) = mine.keys().find(|k| !shapes.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("missing parameter {missing}")));
        }
        if let Some(extra) = shapes.keys().find(|k| !mine.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        for (name, shape) in &mine {
            if shapes[name] != *shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    shapes[name]
                )));
            }
        }
        Ok(())
    }

    pub fn to_entries(&self) -> BTreeMap<String, ParamEntry> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| {
                (
                    n.clone(),
                    ParamEntry {
                        shape: [v.rows(), v.cols()],
                        data: v.data().to_vec(),
                    },
                )
            })
            .collect()
    }

    /// Overwrites every value from checkpoint entries with matching names
    /// and shapes.
    pub fn load_entries(&mut self, entries: &BTreeMap<String, ParamEntry>) -> Result<()> {
        let shapes = entries
            .iter()
            .map(|(k, e)| (k.clone(), (e.shape[0], e.shape[1])))
            .collect();
        self.check_compatible(&shapes)?;
        for (i, name) in self.names.iter().enumerate() {
            let e = &entries[name];
            self.values[i] = Matrix::from_vec(e.shape[0], e.shape[1], e.data.clone())
                .map_err(|_| Error::Checkpoint(format!("parameter {name}: data length does not match shape")))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Weight checkpoint: parameters by name plus enough metadata to rebuild
/// the model that owns them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model_kind: String,
    pub seed: u64,
    pub spec: serde_json::Value,
    pub params: BTreeMap<String, ParamEntry>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_grads_resets_exactly() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::zeros(2, 3));
        store.accumulate_grad(a, &Matrix::filled(2, 3, 1.5));
        assert_eq!(store.grad(a).sum(), 9.0);
        store.zero_grads();
        assert!(store.grad(a).data().iter().all(|&g| g == 0.0));
        assert_eq!(store.grad(a).shape(), store.value(a).shape());
    }

    #[test]
    fn glorot_is_seeded_and_bounded() {
        let mut s1 = ParamStore::new();
        let mut s2 = ParamStore::new();
        let w = s1.add_glorot("w", 4, 8, &mut ChaCha8Rng::seed_from_u64(3));
        s2.add_glorot("w", 4, 8, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(s1, s2);
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(s1.value(w).max_abs() < limit);
    }

    #[test]
    fn entries_round_trip_and_reject_mismatch() {
        let mut store = ParamStore::new();
        store.add_glorot("w", 3, 2, &mut ChaCha8Rng::seed_from_u64(1));
        store.add("b", Matrix::filled(1, 2, 0.25));
        let entries = store.to_entries();
        let mut other = ParamStore::new();
        other.add("w", Matrix::zeros(3, 2));
        other.add("b", Matrix::zeros(1, 2));
        other.load_entries(&entries).unwrap();
        assert_eq!(other.value(other.id("w").unwrap()), store.value(store.id("w").unwrap()));

        let mut wrong = ParamStore::new();
        wrong.add("w", Matrix::zeros(2, 3));
        wrong.add("b", Matrix::zeros(1, 2));
        assert!(matches!(wrong.load_entries(&entries), Err(Error::Checkpoint(_))));
        let mut missing = ParamStore::new();
        missing.add("w", Matrix::zeros(3, 2));
        assert!(missing.load_entries(&entries).is_err());
    }
}
