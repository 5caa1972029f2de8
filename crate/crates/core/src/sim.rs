//! Synchronous discrete-time SIR simulation and Monte-Carlo marginals.
//!
//! Every run draws from its own ChaCha stream (`seed`, stream = run index),
//! so estimates do not depend on how runs are scheduled across threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::graph::Instance;
use crate::trajectory::MarginalTrajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeState {
    S,
    I,
    R,
}

/// States of every node at `t = 0..=T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateTrajectory {
    pub states: Vec<Vec<NodeState>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[derive(Default)]
pub struct SimOptions {
    /// Stop iterating once no node is infected. The remaining steps are
    /// padded with the absorbing state; results are identical either way.
    pub early_exit: bool,
}


const NEVER: usize = usize::MAX;

/// Runs one epidemic and records, per node, the step it became infected and
/// the step it recovered (`NEVER` when it did not happen within `T`).
fn run_times<R: Rng + ?Sized>(
    inst: &Instance,
    rng: &mut R,
    opts: SimOptions,
    infected_at: &mut [usize],
    recovered_at: &mut [usize],
) {
    let g = &inst.graph;
    let n = g.n();
    infected_at.fill(NEVER);
    recovered_at.fill(NEVER);
    let mut state = vec![NodeState::S; n];
    let mut active: Vec<usize> = inst.seeds().to_vec();
    for &s in &active {
        state[s] = NodeState::I;
        infected_at[s] = 0;
    }
    let mut newly = Vec::new();
    let mut still = Vec::new();
    for t in 0..inst.horizon() {
        if active.is_empty() && opts.early_exit {
            break;
        }
        newly.clear();
        for &j in &active {
            for &e in g.out_edges(j) {
                let i = g.edge(e).dst;
                if state[i] == NodeState::S && infected_at[i] == NEVER && rng.gen::<f64>() < g.beta()[e] {
                    infected_at[i] = t + 1;
                    newly.push(i);
                }
            }
        }
        still.clear();
        for &j in &active {
            if rng.gen::<f64>() < g.gamma()[j] {
                state[j] = NodeState::R;
                recovered_at[j] = t + 1;
            } else {
                still.push(j);
            }
        }
        for &i in &newly {
            state[i] = NodeState::I;
        }
        std::mem::swap(&mut active, &mut still);
        active.extend_from_slice(&newly);
    }
}

fn state_at(t: usize, infected_at: usize, recovered_at: usize) -> NodeState {
    if t < infected_at {
        NodeState::S
    } else if t < recovered_at {
        NodeState::I
    } else {
        NodeState::R
    }
}

pub fn simulate_once<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> StateTrajectory {
    simulate_once_with(inst, rng, SimOptions::default())
}

pub fn simulate_once_with<R: Rng + ?Sized>(inst: &Instance, rng: &mut R, opts: SimOptions) -> StateTrajectory {
    let n = inst.n();
    let mut inf = vec![NEVER; n];
    let mut rec = vec![NEVER; n];
    run_times(inst, rng, opts, &mut inf, &mut rec);
    let states = (0..=inst.horizon())
        .map(|t| (0..n).map(|i| state_at(t, inf[i], rec[i])).collect())
        .collect();
    StateTrajectory { states }
}

/// The generator used for run `run` of an estimate seeded with `seed`.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// State counts as difference arrays: `[S, I, R][t * n + node]` over
/// `t = 0..=T+1`.
struct Counts {
    diff: [Vec<i64>; 3],
}

impl Counts {
    fn new(len: usize) -> Self {
        Counts {
            diff: [vec![0; len], vec![0; len], vec![0; len]],
        }
    }

    fn merge(mut self, other: Counts) -> Counts {
        for k in 0..3 {
            for (a, b) in self.diff[k].iter_mut().zip(&other.diff[k]) {
                *a += b;
            }
        }
        self
    }
}

const CHUNK: u64 = 2048;

pub fn estimate_marginals(inst: &Instance, n_runs: u64, seed: u64) -> MarginalTrajectory {
    estimate_marginals_with(inst, n_runs, seed, SimOptions { early_exit: true })
}

/// Per-`(t, node)` state frequencies over `n_runs` independent runs.
pub fn estimate_marginals_with(inst: &Instance, n_runs: u64, seed: u64, opts: SimOptions) -> MarginalTrajectory {
    assert!(n_runs >= 1, "n_runs must be at least 1");
    let n = inst.n();
    let horizon = inst.horizon();
    let len = (horizon + 2) * n;
    let chunks = n_runs.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = Counts::new(len);
            let mut inf = vec![NEVER; n];
            let mut rec = vec![NEVER; n];
            for run in c * CHUNK..((c + 1) * CHUNK).min(n_runs) {
                let mut rng = run_rng(seed, run);
                run_times(inst, &mut rng, opts, &mut inf, &mut rec);
                for i in 0..n {
                    let a = inf[i].min(horizon + 1);
                    let b = rec[i].min(horizon + 1);
                    counts.diff[0][i] += 1;
                    counts.diff[0][a * n + i] -= 1;
                    counts.diff[1][a * n + i] += 1;
                    counts.diff[1][b * n + i] -= 1;
                    counts.diff[2][b * n + i] += 1;
                }
            }
            counts
        })
        .reduce(|| Counts::new(len), Counts::merge);

    let mut out = MarginalTrajectory::zeros(horizon, n);
    let total = n_runs as f64;
    let mut running = [vec![0i64; n], vec![0i64; n], vec![0i64; n]];
    for t in 0..=horizon {
        for i in 0..n {
            for k in 0..3 {
                running[k][i] += counts.diff[k][t * n + i];
            }
            let (s, inf) = (running[0][i], running[1][i]);
            out.ps[t][i] = s as f64 / total;
            out.pi[t][i] = inf as f64 / total;
            out.pr[t][i] = running[2][i] as f64 / total;
        }
    }
    out
}

/// Standard error of a frequency `p` estimated from `n_runs` runs.
pub fn standard_error(p: f64, n_runs: u64) -> f64 {
    (p * (1.0 - p) / n_runs as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn chain(beta: f64, gamma: f64, horizon: usize) -> Instance {
        let g = Graph::from_undirected(2, &[(0, 1, beta)], vec![gamma; 2]).unwrap();
        Instance::new(g, vec![0], horizon).unwrap()
    }

    fn path(n: usize, beta: f64, gamma: f64, horizon: usize) -> Instance {
        let pairs: Vec<_> = (0..n - 1).map(|i| (i, i + 1, beta)).collect();
        let g = Graph::from_undirected(n, &pairs, vec![gamma; n]).unwrap();
        Instance::new(g, vec![0], horizon).unwrap()
    }

    #[test]
    fn zero_beta_never_spreads() {
        let inst = path(5, 0.0, 0.3, 10);
        let mut rng = run_rng(1, 0);
        for _ in 0..50 {
            let traj = simulate_once(&inst, &mut rng);
            for row in &traj.states {
                assert!(row[1..].iter().all(|&s| s == NodeState::S));
            }
        }
    }

    #[test]
    fn unit_gamma_recovers_after_one_step() {
        let inst = path(3, 0.5, 1.0, 6);
        let mut rng = run_rng(2, 0);
        let traj = simulate_once(&inst, &mut rng);
        assert_eq!(traj.states[0][0], NodeState::I);
        assert!(traj.states[1..].iter().all(|row| row[0] == NodeState::R));
    }

    #[test]
    fn transitions_are_unidirectional() {
        let inst = path(6, 0.6, 0.3, 15);
        for run in 0..200 {
            let traj = simulate_once(&inst, &mut run_rng(3, run));
            assert_eq!(traj.states.len(), 16);
            for w in traj.states.windows(2) {
                for (a, b) in w[0].iter().zip(&w[1]) {
                    let ok = matches!(
                        (a, b),
                        (NodeState::S, NodeState::S | NodeState::I)
                            | (NodeState::I, NodeState::I | NodeState::R)
                            | (NodeState::R, NodeState::R)
                    );
                    assert!(ok, "{a:?} -> {b:?}");
                }
            }
        }
    }

    #[test]
    fn early_exit_does_not_change_results() {
        let inst = path(6, 0.4, 0.5, 20);
        for run in 0..100 {
            let a = simulate_once_with(&inst, &mut run_rng(4, run), SimOptions { early_exit: false });
            let b = simulate_once_with(&inst, &mut run_rng(4, run), SimOptions { early_exit: true });
            assert_eq!(a, b);
        }
        let a = estimate_marginals_with(&inst, 3000, 9, SimOptions { early_exit: false });
        let b = estimate_marginals_with(&inst, 3000, 9, SimOptions { early_exit: true });
        assert_eq!(a, b);
    }

    #[test]
    fn estimator_matches_individual_runs() {
        let inst = path(4, 0.5, 0.4, 8);
        let est = estimate_marginals(&inst, 300, 11);
        let mut counts = vec![vec![[0u32; 3]; 4]; 9];
        for run in 0..300 {
            let traj = simulate_once(&inst, &mut run_rng(11, run));
            for (t, row) in traj.states.iter().enumerate() {
                for (i, s) in row.iter().enumerate() {
                    counts[t][i][*s as usize] += 1;
                }
            }
        }
        for t in 0..=8 {
            for i in 0..4 {
                let c = counts[t][i];
                assert_eq!(
                    est.triple(t, i),
                    [c[0] as f64 / 300.0, c[1] as f64 / 300.0, c[2] as f64 / 300.0]
                );
            }
        }
    }

    #[test]
    fn seeds_and_beta_zero_rows() {
        let inst = path(4, 0.0, 0.5, 5);
        let est = estimate_marginals(&inst, 1000, 1);
        assert_eq!(est.pi[0][0], 1.0);
        for t in 0..=5 {
            for i in 1..4 {
                assert_eq!(est.ps[t][i], 1.0);
            }
        }
    }

    #[test]
    fn counts_are_monotone_and_normalized() {
        let inst = path(5, 0.5, 0.3, 12);
        let est = estimate_marginals(&inst, 5000, 2);
        assert!(est.max_normalization_error() < 1e-12);
        for t in 0..12 {
            for i in 0..5 {
                assert!(est.ps[t + 1][i] <= est.ps[t][i]);
                assert!(est.pr[t + 1][i] >= est.pr[t][i]);
            }
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let inst = path(5, 0.5, 0.3, 12);
        assert_eq!(estimate_marginals(&inst, 5000, 77), estimate_marginals(&inst, 5000, 77));
        assert_ne!(estimate_marginals(&inst, 5000, 77), estimate_marginals(&inst, 5000, 78));
    }

    #[test]
    fn two_node_chain_infection_probability() {
        // P(node 1 ever infected) = beta * sum_k ((1-beta)(1-gamma))^k = 2/3.
        let n_runs = 100_000;
        let inst = chain(0.5, 0.5, 30);
        let est = estimate_marginals(&inst, n_runs, 7);
        let p = 1.0 / 3.0;
        let se = standard_error(p, n_runs);
        assert!((est.ps[30][1] - p).abs() < 4.0 * se, "{}", est.ps[30][1]);

        let mut ever = 0u64;
        for run in 0..n_runs {
            let traj = simulate_once(&inst, &mut run_rng(8, run));
            if traj.states[30][1] != NodeState::S {
                ever += 1;
            }
        }
        let freq = ever as f64 / n_runs as f64;
        assert!((freq - 2.0 / 3.0).abs() < 4.0 * se, "{freq}");
    }
}
