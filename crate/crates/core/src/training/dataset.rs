use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{load_instance, save_instance, Instance, Topology, TopologySpec};
use crate::sim::estimate_marginals;

/// Where sample graphs come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    /// Drawn from a generator; with `fixed` the first draw is reused.
    Generate {
        #[serde(flatten)]
        spec: TopologySpec,
        #[serde(default)]
        fixed: bool,
    },
    /// One given undirected topology shared by every sample.
    Given { n: usize, pairs: Vec<(usize, usize)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub graph: GraphSource,
    pub count: usize,
    /// Uniform range of the per-pair infection probability.
    pub beta: (f64, f64),
    /// Uniform range of the per-node recovery probability.
    pub gamma: (f64, f64),
    pub num_seeds: usize,
    pub horizon: usize,
    /// Monte-Carlo runs per label.
    pub n_runs: u64,
}

impl DatasetConfig {
    /// Synthetic-structure setting: one seed, `beta ~ U(0.4, 0.6)`,
    /// `gamma ~ U(0.2, 0.5)`, `T = 30`.
    pub fn structure(spec: TopologySpec, count: usize, n_runs: u64) -> Self {
        DatasetConfig {
            graph: GraphSource::Generate { spec, fixed: false },
            count,
            beta: (0.4, 0.6),
            gamma: (0.2, 0.5),
            num_seeds: 1,
            horizon: 30,
            n_runs,
        }
    }

    /// Fixed real topology: two seeds, `beta ~ U(0, 0.3)`,
    /// `gamma ~ U(0.1, 0.4)`, `T = 30`.
    pub fn real_network(topology: &Topology, count: usize, n_runs: u64) -> Self {
        DatasetConfig {
            graph: GraphSource::Given {
                n: topology.n,
                pairs: topology.pairs.clone(),
            },
            count,
            beta: (0.0, 0.3),
            gamma: (0.1, 0.4),
            num_seeds: 2,
            horizon: 30,
            n_runs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, (lo, hi)) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::invalid(
                    field,
                    format!("range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1"),
                ));
            }
        }
        if self.count == 0 {
            return Err(Error::invalid("count", "must be positive"));
        }
        if self.num_seeds == 0 {
            return Err(Error::invalid("num_seeds", "must be positive"));
        }
        if self.n_runs == 0 {
            return Err(Error::invalid("n_runs", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Train/val/test sizes in the ratio 6:2:2, rounded by largest remainder
/// (ties go to the earlier split).
pub fn split_sizes(count: usize) -> [usize; 3] {
    let weights = [6, 2, 2];
    let mut sizes = weights.map(|w| count * w / 10);
    let mut rest: Vec<usize> = (0..3).collect();
    rest.sort_by_key(|&k| std::cmp::Reverse(count * weights[k] % 10));
    let missing = count - sizes.iter().sum::<usize>();
    for &k in rest.iter().take(missing) {
        sizes[k] += 1;
    }
    sizes
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub file: String,
    pub split: Split,
    pub mc_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub data_seed: u64,
    pub samples: Vec<SampleRecord>,
}

/// Labelled instances with their split assignment.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub data_seed: u64,
    pub instances: Vec<Instance>,
    pub splits: Vec<Split>,
    pub mc_seeds: Vec<u64>,
}

impl Dataset {
    pub fn split(&self, which: Split) -> Vec<&Instance> {
        self.instances
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == which)
            .map(|(inst, _)| inst)
            .collect()
    }

    pub fn split_owned(&self, which: Split) -> Vec<Instance> {
        self.split(which).into_iter().cloned().collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            config: self.config.clone(),
            data_seed: self.data_seed,
            samples: self
                .splits
                .iter()
                .zip(&self.mc_seeds)
                .enumerate()
                .map(|(k, (&split, &mc_seed))| SampleRecord {
                    file: format!("instances/{k:05}.json"),
                    split,
                    mc_seed,
                })
                .collect(),
        }
    }

    /// Writes `manifest.json` and one instance document per sample.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("instances"))?;
        let manifest = self.manifest();
        for (record, inst) in manifest.samples.iter().zip(&self.instances) {
            fs::write(dir.join(&record.file), save_instance(inst))?;
        }
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let instances = manifest
            .samples
            .iter()
            .map(|r| {
                let inst = load_instance(&fs::read_to_string(dir.join(&r.file))?)?;
                if inst.labels.is_none() {
                    return Err(Error::invalid("labels", format!("{} has no labels", r.file)));
                }
                Ok(inst)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            config: manifest.config,
            data_seed: manifest.data_seed,
            splits: manifest.samples.iter().map(|r| r.split).collect(),
            mc_seeds: manifest.samples.iter().map(|r| r.mc_seed).collect(),
            instances,
        })
    }
}

fn draw_instance<R: Rng>(config: &DatasetConfig, topology: &Topology, rng: &mut R) -> Result<Instance> {
    let uniform = |rng: &mut R, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let beta: Vec<f64> = (0..topology.pairs.len()).map(|_| uniform(rng, config.beta)).collect();
    let gamma: Vec<f64> = (0..topology.n).map(|_| uniform(rng, config.gamma)).collect();
    if config.num_seeds > topology.n {
        return Err(Error::invalid(
            "num_seeds",
            format!("{} seeds on {} nodes", config.num_seeds, topology.n),
        ));
    }
    let seeds = rand::seq::index::sample(rng, topology.n, config.num_seeds).into_vec();
    Instance::new(topology.to_graph(&beta, gamma)?, seeds, config.horizon)
}

/// Draws `count` instances from `config`, labels them by Monte-Carlo and
/// assigns splits. Everything is a function of `(config, data_seed)`.
pub fn make_dataset(config: &DatasetConfig, data_seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let mut fixed: Option<Topology> = match &config.graph {
        GraphSource::Given { n, pairs } => Some(Topology {
            n: *n,
            pairs: pairs.clone(),
        }),
        GraphSource::Generate { .. } => None,
    };
    let mut unlabeled = Vec::with_capacity(config.count);
    let mut mc_seeds = Vec::with_capacity(config.count);
    for _ in 0..config.count {
        let topology = match (&config.graph, &fixed) {
            (_, Some(t)) => t.clone(),
            (GraphSource::Generate { spec, fixed: keep }, None) => {
                let t = spec.sample(&mut rng)?;
                if *keep {
                    fixed = Some(t.clone());
                }
                t
            }
            (GraphSource::Given { .. }, None) => unreachable!("given topology is always set"),
        };
        unlabeled.push(draw_instance(config, &topology, &mut rng)?);
        mc_seeds.push(rng.gen::<u64>());
    }
    let mut order: Vec<usize> = (0..config.count).collect();
    order.shuffle(&mut rng);
    let [n_train, n_val, _] = split_sizes(config.count);
    let mut splits = vec![Split::Test; config.count];
    for (rank, &k) in order.iter().enumerate() {
        splits[k] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let instances = unlabeled
        .into_par_iter()
        .zip(mc_seeds.par_iter())
        .map(|(inst, &seed)| {
            let labels = estimate_marginals(&inst, config.n_runs, seed);
            inst.with_labels(labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: config.clone(),
        data_seed,
        instances,
        splits,
        mc_seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(count: usize) -> DatasetConfig {
        let mut c = DatasetConfig::structure(TopologySpec::Cycle { n: 6 }, count, 200);
        c.horizon = 5;
        c
    }

    #[test]
    fn split_sizes_follow_largest_remainder() {
        assert_eq!(split_sizes(5), [3, 1, 1]);
        assert_eq!(split_sizes(10), [6, 2, 2]);
        assert_eq!(split_sizes(200), [120, 40, 40]);
        assert_eq!(split_sizes(7), [4, 2, 1]);
        assert_eq!(split_sizes(1), [1, 0, 0]);
        for count in 0..100 {
            assert_eq!(split_sizes(count).iter().sum::<usize>(), count);
        }
    }

    #[test]
    fn dataset_is_reproducible_and_split() {
        let a = make_dataset(&small(5), 3).unwrap();
        let b = make_dataset(&small(5), 3).unwrap();
        assert_eq!(a.instances, b.instances);
        assert_eq!(a.splits, b.splits);
        assert_eq!(a.split(Split::Train).len(), 3);
        assert_eq!(a.split(Split::Val).len(), 1);
        assert_eq!(a.split(Split::Test).len(), 1);
        let c = make_dataset(&small(5), 4).unwrap();
        assert_ne!(a.instances, c.instances);
    }

    #[test]
    fn samples_respect_config() {
        let mut cfg = DatasetConfig::structure(TopologySpec::ErdosRenyi { n: 10, p: 0.4 }, 6, 100);
        cfg.num_seeds = 2;
        cfg.horizon = 4;
        let d = make_dataset(&cfg, 1).unwrap();
        for inst in &d.instances {
            let g = &inst.graph;
            assert!(g.is_symmetric());
            assert_eq!(inst.seeds().len(), 2);
            assert!(g.beta().iter().all(|b| (0.4..0.6).contains(b)));
            assert!(g.gamma().iter().all(|c| (0.2..0.5).contains(c)));
            for e in 0..g.num_edges() {
                assert_eq!(g.beta()[e], g.beta()[g.reverse(e).unwrap()]);
            }
            let labels = inst.labels.as_ref().unwrap();
            assert!(labels.max_normalization_error() < 1e-12);
        }
    }

    #[test]
    fn fixed_topology_is_shared() {
        let mut cfg = small(4);
        cfg.graph = GraphSource::Generate {
            spec: TopologySpec::ErdosRenyi { n: 8, p: 0.5 },
            fixed: true,
        };
        let d = make_dataset(&cfg, 9).unwrap();
        let edges = |i: usize| d.instances[i].graph.edges().to_vec();
        assert!((1..4).all(|i| edges(i) == edges(0)));
    }

    #[test]
    fn directory_round_trip() {
        let d = make_dataset(&small(5), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.splits, d.splits);
        assert_eq!(back.config, d.config);
        for (a, b) in back.instances.iter().zip(&d.instances) {
            assert_eq!(a.graph, b.graph);
            let (la, lb) = (a.labels.as_ref().unwrap(), b.labels.as_ref().unwrap());
            assert!(la.max_abs_diff(lb) == 0.0);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small(5);
        cfg.beta = (0.6, 0.4);
        assert!(make_dataset(&cfg, 0).is_err());
        let mut cfg = small(5);
        cfg.num_seeds = 7;
        assert!(make_dataset(&cfg, 0).is_err());
        let cfg: std::result::Result<DatasetConfig, _> =
            serde_json::from_str(r#"{"graph":{"generate":{"kind":"cycle","n":4}},"count":1}"#);
        assert!(cfg.is_err());
    }

    #[test]
    fn config_json_shape() {
        let cfg = DatasetConfig::structure(TopologySpec::Tree { n: 12 }, 200, 100_000);
        let v = serde_json::to_value(&cfg).unwrap();
        assert_eq!(v["graph"]["generate"]["kind"], "tree");
        assert_eq!(v["graph"]["generate"]["fixed"], false);
        let back: DatasetConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
    }
}
