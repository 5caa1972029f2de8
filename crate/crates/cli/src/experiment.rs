//! End-to-end experiment protocols: generate datasets, train the learned
//! models, evaluate every method and write result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nedmp_core::graph::TopologySpec;
use nedmp_core::models::{Model, ModelKind};
use nedmp_core::training::{
    log_to_csv, make_dataset, train, Dataset, DatasetConfig, GraphSource, Predictor, Split, TrainConfig,
};
use nedmp_core::{Error, Instance, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Inference method named on the command line and in experiment specs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dmp,
    Gnn,
    Nedmp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dmp => "dmp",
            Method::Gnn => "gnn",
            Method::Nedmp => "nedmp",
        }
    }

    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            Method::Dmp => None,
            Method::Gnn => Some(ModelKind::NodeGnn),
            Method::Nedmp => Some(ModelKind::Nedmp),
        }
    }
}

/// Sampling settings shared by every dataset of an experiment; the graph
/// and any swept parameter are filled in per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetTemplate {
    pub count: usize,
    pub beta: (f64, f64),
    pub gamma: (f64, f64),
    pub num_seeds: usize,
    pub horizon: usize,
    pub n_runs: u64,
}

impl DatasetTemplate {
    pub fn config(&self, graph: GraphSource) -> DatasetConfig {
        DatasetConfig {
            graph,
            count: self.count,
            beta: self.beta,
            gamma: self.gamma,
            num_seeds: self.num_seeds,
            horizon: self.horizon,
            n_runs: self.n_runs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Beta,
    Gamma,
    Seeds,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Beta => "beta",
            Axis::Gamma => "gamma",
            Axis::Seeds => "seeds",
        }
    }

    /// `base` with the swept parameter restricted to `[lo, hi]`.
    fn apply(self, mut base: DatasetConfig, lo: f64, hi: f64) -> Result<DatasetConfig> {
        match self {
            Axis::Beta => base.beta = (lo, hi),
            Axis::Gamma => base.gamma = (lo, hi),
            Axis::Seeds => {
                if lo != hi || lo < 1.0 || lo.fract() != 0.0 {
                    return Err(Error::InvalidField {
                        field: "seeds",
                        message: format!("seed counts must be positive integers, got ({lo}, {hi})"),
                    });
                }
                base.num_seeds = lo as usize;
            }
        }
        Ok(base)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// Train on each structure, evaluate on the test split of every
    /// structure.
    StructureMatrix {
        structures: Vec<TopologySpec>,
        dataset: DatasetTemplate,
    },
    /// Train and test separately at every value of one parameter.
    ParameterSweep {
        graph: GraphSource,
        axis: Axis,
        values: Vec<f64>,
        dataset: DatasetTemplate,
    },
    /// Train once with the parameter drawn from `train_range`, then test
    /// at every value of `eval_values` on `eval_count` fresh instances.
    ParameterWindow {
        graph: GraphSource,
        axis: Axis,
        train_range: (f64, f64),
        eval_values: Vec<f64>,
        eval_count: usize,
        dataset: DatasetTemplate,
    },
}

fn default_methods() -> Vec<Method> {
    vec![Method::Dmp, Method::Gnn, Method::Nedmp]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub train: TrainConfig,
    pub protocol: Protocol,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |field, message: &str| {
            Err(Error::InvalidField {
                field,
                message: message.to_string(),
            })
        };
        if self.methods.is_empty() {
            return invalid("methods", "at least one method is required");
        }
        match &self.protocol {
            Protocol::StructureMatrix { structures, .. } if structures.is_empty() => {
                invalid("structures", "sweep axis is empty")
            }
            Protocol::ParameterSweep { values, .. } if values.is_empty() => invalid("values", "sweep axis is empty"),
            Protocol::ParameterWindow {
                eval_values,
                eval_count,
                ..
            } if eval_values.is_empty() || *eval_count == 0 => invalid("eval_values", "evaluation grid is empty"),
            Protocol::ParameterWindow { axis: Axis::Seeds, .. } => {
                invalid("axis", "windows are defined for beta or gamma")
            }
            _ => self.train.validate(),
        }
    }
}

/// One L1 measurement.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub method: Method,
    /// Training condition (structure name or parameter value); `-` for DMP.
    pub trained_on: String,
    /// Evaluation condition.
    pub tested_on: String,
    pub value: Option<f64>,
    pub in_window: Option<bool>,
    pub l1: f64,
}

/// Predicted vs Monte-Carlo recovered probability at the final step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub method: Method,
    pub condition: String,
    pub instance: usize,
    pub node: usize,
    pub predicted: f64,
    pub reference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub cell: String,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentResults {
    pub cells: Vec<Cell>,
    pub scatter: Vec<ScatterPoint>,
    pub failures: Vec<Failure>,
    pub logs: BTreeMap<String, String>,
    pub checkpoints: BTreeMap<String, String>,
    /// `(condition, tipping point)` annotations for parameter sweeps.
    pub tipping_points: Vec<(String, Option<f64>)>,
}

impl ExperimentResults {
    pub fn l1(&self, method: Method, trained_on: &str, tested_on: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.trained_on == trained_on && c.tested_on == tested_on)
            .map(|c| c.l1)
    }

    /// Mean L1 of the cells of `method` selected by `keep`.
    pub fn mean_where(&self, method: Method, keep: impl Fn(&Cell) -> bool) -> Option<f64> {
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.method == method && keep(c))
            .map(|c| c.l1)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Independent 64-bit seed for sub-task `k` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng.next_u64()
}

pub struct Runner<'a> {
    pub data_seed: u64,
    pub train_seed: u64,
    pub progress: Box<dyn FnMut(&str) + 'a>,
}

impl<'a> Runner<'a> {
    pub fn new(data_seed: u64, train_seed: u64) -> Self {
        Runner {
            data_seed,
            train_seed,
            progress: Box::new(|_| {}),
        }
    }

    pub fn with_progress(mut self, f: impl FnMut(&str) + 'a) -> Self {
        self.progress = Box::new(f);
        self
    }

    pub fn run(&mut self, spec: &ExperimentSpec) -> Result<ExperimentResults> {
        spec.validate()?;
        let mut results = ExperimentResults::default();
        match &spec.protocol {
            Protocol::StructureMatrix { structures, dataset } => {
                self.structure_matrix(spec, structures, dataset, &mut results)
            }
            Protocol::ParameterSweep {
                graph,
                axis,
                values,
                dataset,
            } => self.parameter_sweep(spec, graph, *axis, values, dataset, &mut results),
            Protocol::ParameterWindow {
                graph,
                axis,
                train_range,
                eval_values,
                eval_count,
                dataset,
            } => {
                let eval_template = DatasetTemplate {
                    count: *eval_count,
                    ..dataset.clone()
                };
                self.parameter_window(
                    spec,
                    graph,
                    *axis,
                    *train_range,
                    eval_values,
                    dataset,
                    &eval_template,
                    &mut results,
                )
            }
        }
        Ok(results)
    }

    /// Resolves a `fixed` generator to one concrete topology so every
    /// dataset of the run shares it.
    fn pin(&mut self, graph: &GraphSource, results: &mut ExperimentResults) -> Option<GraphSource> {
        match graph {
            GraphSource::Generate { spec, fixed: true } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.data_seed, u64::MAX));
                match spec.sample(&mut rng) {
                    Ok(t) => Some(GraphSource::Given { n: t.n, pairs: t.pairs }),
                    Err(e) => {
                        results.failures.push(Failure {
                            cell: format!("topology {}", spec.name()),
                            error: e.to_string(),
                        });
                        None
                    }
                }
            }
            other => Some(other.clone()),
        }
    }

    fn dataset(
        &mut self,
        label: &str,
        config: &DatasetConfig,
        k: u64,
        results: &mut ExperimentResults,
    ) -> Option<Dataset> {
        (self.progress)(&format!("generating {label}"));
        match make_dataset(config, derive_seed(self.data_seed, k)) {
            Ok(d) => Some(d),
            Err(e) => {
                results.failures.push(Failure {
                    cell: format!("dataset {label}"),
                    error: e.to_string(),
                });
                None
            }
        }
    }

    /// Trains every learned method on `data`; failed cells are recorded and
    /// skipped.
    fn train_all(
        &mut self,
        spec: &ExperimentSpec,
        label: &str,
        data: &Dataset,
        k: u64,
        results: &mut ExperimentResults,
    ) -> Vec<(Method, Model)> {
        let (tr, va) = (data.split(Split::Train), data.split(Split::Val));
        let mut models = Vec::new();
        for &method in &spec.methods {
            let Some(kind) = method.model_kind() else { continue };
            (self.progress)(&format!("training {} on {label}", method.name()));
            let key = format!("{}_{label}", method.name());
            match train(kind, &tr, &va, &spec.train, derive_seed(self.train_seed, k)) {
                Ok(out) => {
                    results.logs.insert(key.clone(), log_to_csv(&out.log, None));
                    results.checkpoints.insert(key, out.model.to_checkpoint().to_json());
                    models.push((method, out.model));
                }
                Err(e) => results.failures.push(Failure {
                    cell: format!("train {key}"),
                    error: e.to_string(),
                }),
            }
        }
        models
    }

    fn evaluate(
        &mut self,
        method: Method,
        model: Option<&Model>,
        insts: &[&Instance],
        cell: String,
        results: &mut ExperimentResults,
    ) -> Option<f64> {
        let predictor = model.map_or(Predictor::Dmp, Predictor::Learned);
        match predictor.mean_l1(insts) {
            Ok(v) => Some(v),
            Err(e) => {
                results.failures.push(Failure {
                    cell: format!("eval {} {cell}", method.name()),
                    error: e.to_string(),
                });
                None
            }
        }
    }

    fn structure_matrix(
        &mut self,
        spec: &ExperimentSpec,
        structures: &[TopologySpec],
        template: &DatasetTemplate,
        results: &mut ExperimentResults,
    ) {
        let names: Vec<String> = structures.iter().map(|s| s.name().to_string()).collect();
        let datasets: Vec<Option<Dataset>> = structures
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let cfg = template.config(GraphSource::Generate {
                    spec: s.clone(),
                    fixed: false,
                });
                self.dataset(&names[k], &cfg, k as u64, results)
            })
            .collect();
        if spec.methods.contains(&Method::Dmp) {
            for (name, data) in names.iter().zip(&datasets) {
                let Some(data) = data else { continue };
                let test = data.split(Split::Test);
                if let Some(l1) = self.evaluate(Method::Dmp, None, &test, name.clone(), results) {
                    push_cell(results, Method::Dmp, "-", name, None, None, l1);
                    scatter(results, Method::Dmp, None, name, &test);
                }
            }
        }
        for (k, train_name) in names.iter().enumerate() {
            let Some(train_data) = &datasets[k] else { continue };
            let models = self.train_all(spec, train_name, train_data, k as u64, results);
            for (method, model) in &models {
                for (test_name, data) in names.iter().zip(&datasets) {
                    let Some(data) = data else { continue };
                    let test = data.split(Split::Test);
                    let cell = format!("{train_name}->{test_name}");
                    if let Some(l1) = self.evaluate(*method, Some(model), &test, cell, results) {
                        push_cell(results, *method, train_name, test_name, None, None, l1);
                    }
                    if test_name == train_name {
                        scatter(results, *method, Some(model), test_name, &test);
                    }
                }
            }
        }
    }

    fn parameter_sweep(
        &mut self,
        spec: &ExperimentSpec,
        graph: &GraphSource,
        axis: Axis,
        values: &[f64],
        template: &DatasetTemplate,
        results: &mut ExperimentResults,
    ) {
        let Some(graph) = self.pin(graph, results) else { return };
        let graph = &graph;
        for (k, &v) in values.iter().enumerate() {
            let label = format!("{}={v}", axis.name());
            let cfg = match axis.apply(template.config(graph.clone()), v, v) {
                Ok(c) => c,
                Err(e) => {
                    results.failures.push(Failure {
                        cell: label,
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            let Some(data) = self.dataset(&label, &cfg, k as u64, results) else {
                continue;
            };
            results.tipping_points.push((label.clone(), tipping_point(&data)));
            let test = data.split(Split::Test);
            if spec.methods.contains(&Method::Dmp) {
                if let Some(l1) = self.evaluate(Method::Dmp, None, &test, label.clone(), results) {
                    push_cell(results, Method::Dmp, "-", &label, Some(v), None, l1);
                }
            }
            for (method, model) in self.train_all(spec, &label, &data, k as u64, results) {
                if let Some(l1) = self.evaluate(method, Some(&model), &test, label.clone(), results) {
                    push_cell(results, method, &label, &label, Some(v), None, l1);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn parameter_window(
        &mut self,
        spec: &ExperimentSpec,
        graph: &GraphSource,
        axis: Axis,
        (lo, hi): (f64, f64),
        eval_values: &[f64],
        template: &DatasetTemplate,
        eval_template: &DatasetTemplate,
        results: &mut ExperimentResults,
    ) {
        let Some(graph) = self.pin(graph, results) else { return };
        let graph = &graph;
        let train_label = format!("{}in[{lo},{hi}]", axis.name());
        let models = match axis.apply(template.config(graph.clone()), lo, hi) {
            Ok(cfg) => match self.dataset(&train_label, &cfg, 0, results) {
                Some(data) => self.train_all(spec, &train_label, &data, 0, results),
                None => Vec::new(),
            },
            Err(e) => {
                results.failures.push(Failure {
                    cell: train_label.clone(),
                    error: e.to_string(),
                });
                Vec::new()
            }
        };
        for (k, &v) in eval_values.iter().enumerate() {
            let label = format!("{}={v}", axis.name());
            let inside = (lo..=hi).contains(&v);
            let cfg = match axis.apply(eval_template.config(graph.clone()), v, v) {
                Ok(c) => c,
                Err(e) => {
                    results.failures.push(Failure {
                        cell: label,
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            let Some(data) = self.dataset(&label, &cfg, k as u64 + 1, results) else {
                continue;
            };
            let all: Vec<&Instance> = data.instances.iter().collect();
            if spec.methods.contains(&Method::Dmp) {
                if let Some(l1) = self.evaluate(Method::Dmp, None, &all, label.clone(), results) {
                    push_cell(results, Method::Dmp, "-", &label, Some(v), Some(inside), l1);
                }
            }
            for (method, model) in &models {
                if let Some(l1) = self.evaluate(*method, Some(model), &all, label.clone(), results) {
                    push_cell(results, *method, &train_label, &label, Some(v), Some(inside), l1);
                }
            }
        }
    }
}

fn push_cell(
    results: &mut ExperimentResults,
    method: Method,
    trained_on: &str,
    tested_on: &str,
    value: Option<f64>,
    in_window: Option<bool>,
    l1: f64,
) {
    results.cells.push(Cell {
        method,
        trained_on: trained_on.to_string(),
        tested_on: tested_on.to_string(),
        value,
        in_window,
        l1,
    });
}

fn scatter(
    results: &mut ExperimentResults,
    method: Method,
    model: Option<&Model>,
    condition: &str,
    test: &[&Instance],
) {
    let predictor = model.map_or(Predictor::Dmp, Predictor::Learned);
    for (k, inst) in test.iter().enumerate() {
        let (Ok(pred), Some(labels)) = (predictor.predict(inst), inst.labels.as_ref()) else {
            continue;
        };
        let t = inst.horizon();
        for node in 0..inst.n() {
            results.scatter.push(ScatterPoint {
                method,
                condition: condition.to_string(),
                instance: k,
                node,
                predicted: pred.pr[t][node],
                reference: labels.pr[t][node],
            });
        }
    }
}

/// Mean over the dataset's instances of `gamma <k> / (<k^2> - <k>)`, with
/// each instance's mean recovery rate.
fn tipping_point(data: &Dataset) -> Option<f64> {
    let v: Vec<f64> = data
        .instances
        .iter()
        .filter_map(|inst| {
            let g = &inst.graph;
            let gamma = g.gamma().iter().sum::<f64>() / g.n().max(1) as f64;
            g.tipping_point(gamma)
        })
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn csv_comment(provenance: &str) -> String {
    provenance.lines().map(|l| format!("# {l}\n")).collect()
}

/// Writes every table of `results` into `dir` and returns the file paths.
pub fn write_results(
    dir: &Path,
    spec: &ExperimentSpec,
    results: &ExperimentResults,
    provenance: &str,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    let head = csv_comment(provenance);

    let mut cells = head.clone();
    cells.push_str("method,trained_on,tested_on,value,in_window,l1\n");
    for c in &results.cells {
        let value = c.value.map_or(String::new(), |v| v.to_string());
        let inside = c.in_window.map_or(String::new(), |b| b.to_string());
        let _ = writeln!(
            cells,
            "{},{},{},{value},{inside},{:.6}",
            c.method.name(),
            c.trained_on,
            c.tested_on,
            c.l1
        );
    }
    let table = match spec.protocol {
        Protocol::StructureMatrix { .. } => "matrix.csv",
        Protocol::ParameterSweep { .. } => "sweep.csv",
        Protocol::ParameterWindow { .. } => "window.csv",
    };
    put(table, cells)?;

    let mut summary = head.clone();
    match spec.protocol {
        Protocol::StructureMatrix { .. } => {
            summary.push_str("method,diagonal_mean,off_diagonal_mean\n");
            for &m in &spec.methods {
                let diag = results.mean_where(m, |c| m == Method::Dmp || c.trained_on == c.tested_on);
                let off = results.mean_where(m, |c| m != Method::Dmp && c.trained_on != c.tested_on);
                let _ = writeln!(summary, "{},{},{}", m.name(), fmt_opt(diag), fmt_opt(off));
            }
        }
        Protocol::ParameterSweep { .. } => {
            summary.push_str("condition,tipping_point\n");
            for (label, tp) in &results.tipping_points {
                let _ = writeln!(summary, "{label},{}", fmt_opt(*tp));
            }
        }
        Protocol::ParameterWindow { .. } => {
            summary.push_str("method,in_window_mean,out_of_window_mean\n");
            for &m in &spec.methods {
                let inside = results.mean_where(m, |c| c.in_window == Some(true));
                let outside = results.mean_where(m, |c| c.in_window == Some(false));
                let _ = writeln!(summary, "{},{},{}", m.name(), fmt_opt(inside), fmt_opt(outside));
            }
        }
    }
    put("summary.csv", summary)?;

    if !results.scatter.is_empty() {
        let mut sc = head.clone();
        sc.push_str("method,condition,instance,node,predicted_pr,reference_pr\n");
        for p in &results.scatter {
            let _ = writeln!(
                sc,
                "{},{},{},{},{:.6},{:.6}",
                p.method.name(),
                p.condition,
                p.instance,
                p.node,
                p.predicted,
                p.reference
            );
        }
        put("scatter.csv", sc)?;
    }
    for (key, log) in &results.logs {
        put(&format!("logs/{key}.csv"), format!("{head}{log}"))?;
    }
    for (key, ckpt) in &results.checkpoints {
        put(&format!("checkpoints/{key}.json"), ckpt.clone())?;
    }
    put("failures.json", serde_json::to_string_pretty(&results.failures)?)?;
    Ok(written)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}
