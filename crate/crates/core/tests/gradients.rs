//! End-to-end reverse-mode gradients of the training loss against central
//! differences through the whole unrolled forward pass.

use nedmp_core::graph::{Graph, Instance};
use nedmp_core::models::{Model, ModelKind, ModelSpec};
use nedmp_core::neural::ParamStore;
use nedmp_core::sim::estimate_marginals;
use nedmp_core::training::check_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn four_node_instance() -> Instance {
    let g = Graph::from_undirected(
        4,
        &[(0, 1, 0.45), (0, 2, 0.55), (1, 3, 0.5), (2, 3, 0.42), (1, 2, 0.58)],
        vec![0.3, 0.25, 0.45, 0.35],
    )
    .unwrap();
    let inst = Instance::new(g, vec![0], 3).unwrap();
    let labels = estimate_marginals(&inst, 2000, 1);
    inst.with_labels(labels).unwrap()
}

/// Moves every weight off its initial value so no unit sits on a kink or
/// at an exactly zero output layer.
fn jitter(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
}

fn assert_gradients(kind: ModelKind, hidden: usize) {
    let inst = four_node_instance();
    let mut model = Model::new(kind, ModelSpec { hidden }, 4).unwrap();
    jitter(model.store_mut(), 9);
    let samples = check_gradients(&mut model, &inst, 5.0, 1e-5).unwrap();
    assert_eq!(samples.len(), model.store().num_scalars());
    let bad: Vec<_> = samples.iter().filter(|s| !s.within(1e-3, 1e-8)).collect();
    assert!(
        bad.is_empty(),
        "{} of {} mismatches, first: {:?}",
        bad.len(),
        samples.len(),
        bad.first()
    );
    let nonzero = samples.iter().filter(|s| s.analytic.abs() > 1e-8).count();
    assert!(
        nonzero * 2 > samples.len(),
        "gradient mostly zero: {nonzero}/{}",
        samples.len()
    );
}

#[test]
fn nedmp_gradients_match_finite_differences() {
    assert_gradients(ModelKind::Nedmp, 8);
}

#[test]
fn nodegnn_gradients_match_finite_differences() {
    assert_gradients(ModelKind::NodeGnn, 8);
}
