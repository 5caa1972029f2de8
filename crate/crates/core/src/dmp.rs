//! Dynamic message passing for SIR.
//!
//! Messages live on directed edges `(j -> i)`:
//!
//! * `theta`: the infection has not crossed `j -> i` yet,
//! * `phi`: it has not crossed and `j` is infected,
//! * `ps_cavity`: `j` is susceptible when infections from `i` are ignored.
//!
//! One step updates, in order, `theta` from the previous `phi`, the cavity
//! and node susceptibilities as products of incoming `theta`, `phi` from the
//! change in cavity susceptibility, and finally `P_R` and `P_I`. The
//! infected marginal is normalized at the same step, `P_I(t) = 1 - P_R(t) -
//! P_S(t)`, so every row sums to one.

use crate::graph::Instance;
use crate::trajectory::MarginalTrajectory;

#[derive(Clone, Debug, PartialEq)]
pub struct DmpState {
    pub t: usize,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub ps_cavity: Vec<f64>,
    pub ps: Vec<f64>,
    pub pi: Vec<f64>,
    pub pr: Vec<f64>,
}

/// Precomputed per-instance quantities shared by every step.
#[derive(Clone, Debug)]
pub struct Dmp<'a> {
    inst: &'a Instance,
    ps0: Vec<f64>,
    /// Position of the reverse edge `(i -> j)` inside `in_edges(j)` for each
    /// edge `(j -> i)`.
    excluded: Vec<Option<usize>>,
    /// `(1 - beta_ji)(1 - gamma_j)` per edge.
    decay: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DmpOptions {
    /// Stop once `theta` and all marginals move less than this between
    /// steps, padding the rest of the trajectory with the final state.
    pub tolerance: Option<f64>,
}

impl<'a> Dmp<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        let g = &inst.graph;
        let ps0 = (0..g.n()).map(|i| if inst.is_seed(i) { 0.0 } else { 1.0 }).collect();
        let excluded = (0..g.num_edges())
            .map(|e| {
                let src = g.edge(e).src;
                g.reverse(e).map(|r| {
                    g.in_edges(src)
                        .iter()
                        .position(|&x| x == r)
                        .expect("reverse enters src")
                })
            })
            .collect();
        let decay = g
            .edges()
            .iter()
            .zip(g.beta())
            .map(|(edge, &b)| (1.0 - b) * (1.0 - g.gamma()[edge.src]))
            .collect();
        Dmp {
            inst,
            ps0,
            excluded,
            decay,
        }
    }

    pub fn init(&self) -> DmpState {
        let g = &self.inst.graph;
        let phi = g
            .edges()
            .iter()
            .map(|e| if self.inst.is_seed(e.src) { 1.0 } else { 0.0 })
            .collect();
        let ps_cavity = g.edges().iter().map(|e| self.ps0[e.src]).collect();
        let pi = self.ps0.iter().map(|&s| 1.0 - s).collect();
        DmpState {
            t: 0,
            theta: vec![1.0; g.num_edges()],
            phi,
            ps_cavity,
            ps: self.ps0.clone(),
            pi,
            pr: vec![0.0; g.n()],
        }
    }

    /// Products of `theta` over each node's incoming edges: the full product
    /// per node, and per outgoing edge the product that skips the reverse
    /// edge. Uses prefix/suffix products, so no division is needed.
    pub fn aggregate(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = &self.inst.graph;
        let mut node = vec![0.0; g.n()];
        let mut cavity = vec![0.0; g.num_edges()];
        let mut prefix = Vec::new();
        let mut suffix = Vec::new();
        for j in 0..g.n() {
            let incoming = g.in_edges(j);
            prefix.clear();
            prefix.push(1.0);
            for &e in incoming {
                let last = *prefix.last().unwrap();
                prefix.push(last * theta[e]);
            }
            suffix.clear();
            suffix.resize(incoming.len() + 1, 1.0);
            for k in (0..incoming.len()).rev() {
                suffix[k] = suffix[k + 1] * theta[incoming[k]];
            }
            let full = prefix[incoming.len()];
            node[j] = self.ps0[j] * full;
            for &e in g.out_edges(j) {
                let rest = match self.excluded[e] {
                    Some(pos) => prefix[pos] * suffix[pos + 1],
                    None => full,
                };
                cavity[e] = self.ps0[j] * rest;
            }
        }
        (node, cavity)
    }

    pub fn step(&self, prev: &DmpState) -> DmpState {
        let g = &self.inst.graph;
        let theta: Vec<f64> = prev
            .theta
            .iter()
            .zip(&prev.phi)
            .zip(g.beta())
            .map(|((&th, &ph), &b)| th - b * ph)
            .collect();
        let (ps, ps_cavity) = self.aggregate(&theta);
        let phi = (0..g.num_edges())
            .map(|e| self.decay[e] * prev.phi[e] + (prev.ps_cavity[e] - ps_cavity[e]))
            .collect();
        let pr: Vec<f64> = (0..g.n()).map(|i| prev.pr[i] + g.gamma()[i] * prev.pi[i]).collect();
        let pi = (0..g.n()).map(|i| 1.0 - pr[i] - ps[i]).collect();
        DmpState {
            t: prev.t + 1,
            theta,
            phi,
            ps_cavity,
            ps,
            pi,
            pr,
        }
    }

    pub fn run(&self) -> MarginalTrajectory {
        self.run_with(DmpOptions::default())
    }

    pub fn run_with(&self, opts: DmpOptions) -> MarginalTrajectory {
        let horizon = self.inst.horizon();
        let mut out = MarginalTrajectory::zeros(horizon, self.inst.n());
        let mut state = self.init();
        record(&mut out, &state);
        while state.t < horizon {
            let next = self.step(&state);
            record(&mut out, &next);
            let converged = opts.tolerance.is_some_and(|tol| max_change(&state, &next) < tol);
            state = next;
            if converged {
                for t in state.t + 1..=horizon {
                    out.ps[t].clone_from(&state.ps);
                    out.pi[t].clone_from(&state.pi);
                    out.pr[t].clone_from(&state.pr);
                }
                break;
            }
        }
        out
    }
}

fn record(out: &mut MarginalTrajectory, s: &DmpState) {
    out.ps[s.t].clone_from(&s.ps);
    out.pi[s.t].clone_from(&s.pi);
    out.pr[s.t].clone_from(&s.pr);
}

fn max_change(a: &DmpState, b: &DmpState) -> f64 {
    [(&a.theta, &b.theta), (&a.ps, &b.ps), (&a.pi, &b.pi), (&a.pr, &b.pr)]
        .into_iter()
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

pub fn dmp_init(inst: &Instance) -> DmpState {
    Dmp::new(inst).init()
}

pub fn dmp_step(state: &DmpState, inst: &Instance) -> DmpState {
    Dmp::new(inst).step(state)
}

pub fn dmp_run(inst: &Instance) -> MarginalTrajectory {
    Dmp::new(inst).run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn chain(beta: f64, gamma: f64, horizon: usize) -> Instance {
        let g = Graph::from_undirected(2, &[(0, 1, beta)], vec![gamma; 2]).unwrap();
        Instance::new(g, vec![0], horizon).unwrap()
    }

    #[test]
    fn init_on_two_node_chain() {
        let inst = chain(0.5, 0.5, 3);
        let s = dmp_init(&inst);
        let e01 = inst.graph.find_edge(0, 1).unwrap();
        let e10 = inst.graph.find_edge(1, 0).unwrap();
        assert_eq!(s.theta, vec![1.0, 1.0]);
        assert_eq!(s.phi[e01], 1.0);
        assert_eq!(s.phi[e10], 0.0);
        assert_eq!(s.ps, vec![0.0, 1.0]);
        assert_eq!(s.pi, vec![1.0, 0.0]);
        assert_eq!(s.pr, vec![0.0, 0.0]);
        assert_eq!(s.ps_cavity[e01], 0.0);
        assert_eq!(s.ps_cavity[e10], 1.0);
    }

    #[test]
    fn hand_unrolled_two_node_chain() {
        // Cavity of node 0 excluding 1 is P_S^0(0) = 0, so
        // phi(t) = 0.25 phi(t-1) and theta(t) = theta(t-1) - 0.5 phi(t-1).
        let inst = chain(0.5, 0.5, 3);
        let dmp = Dmp::new(&inst);
        let e01 = inst.graph.find_edge(0, 1).unwrap();
        let s1 = dmp.step(&dmp.init());
        let s2 = dmp.step(&s1);
        let s3 = dmp.step(&s2);
        assert_eq!(s1.theta[e01], 0.5);
        assert_eq!(s1.phi[e01], 0.25);
        assert_eq!(s2.theta[e01], 0.375);
        assert_eq!(s2.phi[e01], 0.0625);
        assert_eq!(s3.theta[e01], 0.34375);
        for s in [&s1, &s2, &s3] {
            assert_eq!(s.ps[1], s.theta[e01]);
        }
    }

    #[test]
    fn two_node_limit() {
        let traj = dmp_run(&chain(0.5, 0.5, 60));
        assert!((traj.ps[60][1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_beta_only_recovers_seeds() {
        let g = Graph::from_undirected(3, &[(0, 1, 0.0), (1, 2, 0.0)], vec![0.3; 3]).unwrap();
        let inst = Instance::new(g, vec![0], 5).unwrap();
        let traj = dmp_run(&inst);
        for t in 0..=5 {
            assert_eq!(traj.ps[t][1], 1.0);
            assert_eq!(traj.ps[t][2], 1.0);
            let expected_pr = 1.0 - 0.7f64.powi(t as i32);
            assert!((traj.pr[t][0] - expected_pr).abs() < 1e-12);
        }
    }

    #[test]
    fn seedless_instance_is_constant() {
        let g = Graph::from_undirected(3, &[(0, 1, 0.5), (1, 2, 0.5)], vec![0.3; 3]).unwrap();
        let inst = Instance::with_any_seeds(g, vec![], 4).unwrap();
        let dmp = Dmp::new(&inst);
        let mut s = dmp.init();
        for _ in 0..4 {
            s = dmp.step(&s);
            assert!(s.phi.iter().all(|&p| p == 0.0));
            assert_eq!(s.ps, vec![1.0; 3]);
        }
    }

    #[test]
    fn all_seeded_and_edgeless() {
        let g = Graph::from_undirected(3, &[(0, 1, 0.5), (1, 2, 0.5)], vec![0.3; 3]).unwrap();
        let inst = Instance::new(g, vec![0, 1, 2], 3).unwrap();
        assert_eq!(dmp_init(&inst).ps, vec![0.0; 3]);

        let g = Graph::new(2, &[], vec![0.5, 0.5]).unwrap();
        let inst = Instance::new(g, vec![1], 3).unwrap();
        let s = dmp_init(&inst);
        assert!(s.theta.is_empty() && s.phi.is_empty());
        let traj = dmp_run(&inst);
        assert_eq!(traj.ps[3], vec![1.0, 0.0]);
        assert!((traj.pr[3][1] - 0.875).abs() < 1e-15);
    }

    #[test]
    fn cavity_matches_direct_products() {
        let pairs = [(0, 1, 0.3), (0, 2, 0.5), (1, 2, 0.4), (2, 3, 0.6), (1, 3, 0.2)];
        let g = Graph::from_undirected(4, &pairs, vec![0.3; 4]).unwrap();
        let inst = Instance::new(g.clone(), vec![3], 5).unwrap();
        let dmp = Dmp::new(&inst);
        let theta: Vec<f64> = (0..g.num_edges()).map(|e| 0.9 - 0.07 * e as f64).collect();
        let (node, cavity) = dmp.aggregate(&theta);
        for j in 0..4 {
            let ps0 = if j == 3 { 0.0 } else { 1.0 };
            let full: f64 = g.in_edges(j).iter().map(|&e| theta[e]).product();
            assert!((node[j] - ps0 * full).abs() < 1e-15);
            for &e in g.out_edges(j) {
                let i = g.edge(e).dst;
                let direct: f64 = g
                    .in_edges(j)
                    .iter()
                    .filter(|&&k| g.edge(k).src != i)
                    .map(|&k| theta[k])
                    .product();
                assert!((cavity[e] - ps0 * direct).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cavity_survives_zero_theta() {
        let g = Graph::from_undirected(3, &[(0, 1, 1.0), (1, 2, 1.0)], vec![0.0; 3]).unwrap();
        let inst = Instance::new(g.clone(), vec![1], 4).unwrap();
        let traj = dmp_run(&inst);
        assert!(traj.is_finite());
        assert_eq!(traj.ps[1], vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn tolerance_pads_with_final_state() {
        let inst = chain(0.5, 0.5, 200);
        let full = Dmp::new(&inst).run();
        let early = Dmp::new(&inst).run_with(DmpOptions { tolerance: Some(1e-12) });
        assert!(full.max_abs_diff(&early) < 1e-11);
    }
}
