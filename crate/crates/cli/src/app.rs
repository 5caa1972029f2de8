//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nedmp_core::dmp::dmp_run;
use nedmp_core::graph::{load_instance, read_edge_list};
use nedmp_core::models::{nedmp_run, Model, ModelKind, ModelSpec, Refinement};
use nedmp_core::neural::Checkpoint;
use nedmp_core::sim::estimate_marginals;
use nedmp_core::training::{
    l1_metric, log_to_csv, make_dataset, train_with, Dataset, DatasetConfig, GraphSource, Predictor, Split, TrainConfig,
};
use nedmp_core::{Error, Instance, MarginalTrajectory};

use crate::experiment::{write_results, ExperimentSpec, Method, Runner};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nedmp", version, about = "Marginal inference for SIR spreading on graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled dataset directory.
    Gen(GenArgs),
    /// Monte-Carlo marginals of one instance.
    Simulate(SimulateArgs),
    /// DMP marginals of one instance.
    Dmp(DmpArgs),
    /// Marginals of one instance from any method.
    Infer(InferArgs),
    /// Write an untrained checkpoint.
    Init(InitArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// L1 error of a method on a dataset split, or between two marginal files.
    Eval(EvalArgs),
    /// Run an experiment protocol end to end.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Dmp,
    Gnn,
    Nedmp,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dmp => Method::Dmp,
            MethodArg::Gnn => Method::Gnn,
            MethodArg::Nedmp => Method::Nedmp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Dataset configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Override the Monte-Carlo run count of the configuration.
    #[arg(long)]
    runs: Option<u64>,
    /// Override the horizon of the configuration.
    #[arg(long)]
    horizon: Option<usize>,
    /// Use this edge list as the fixed topology of every sample.
    #[arg(long)]
    edge_list: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InstanceArgs {
    /// Instance JSON document.
    #[arg(long)]
    instance: PathBuf,
    /// Override the instance horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Output CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    io: InstanceArgs,
    #[arg(long, default_value_t = 100_000)]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    mc_seed: u64,
}

#[derive(Debug, Args)]
struct DmpArgs {
    #[command(flatten)]
    io: InstanceArgs,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    io: InstanceArgs,
    #[arg(long, value_enum)]
    model: MethodArg,
    /// Weight checkpoint, required for gnn and nedmp.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Force scale 1 and shift 0 in the nedmp readout.
    #[arg(long)]
    identity_refine: bool,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long, value_enum)]
    model: MethodArg,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
    /// Hidden width.
    #[arg(long, default_value_t = ModelSpec::default().hidden)]
    hidden: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: MethodArg,
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV (defaults to the checkpoint path with `.log.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
    /// Weight of the monotonicity penalty.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Training configuration JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    model: Option<MethodArg>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    identity_refine: bool,
    /// Predicted marginals CSV, compared against `--labels`.
    #[arg(long, requires = "labels", conflicts_with_all = ["dataset", "model"])]
    pred: Option<PathBuf>,
    /// Reference marginals CSV.
    #[arg(long, requires = "pred")]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment specification JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
}

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite(_) => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn data_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_DATA,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let provenance = invocation(&args);
    match dispatch(cli.command, &provenance) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn invocation(args: &[OsString]) -> String {
    let mut parts = vec!["nedmp".to_string()];
    parts.extend(args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()));
    parts.join(" ")
}

fn dispatch(cmd: Command, provenance: &str) -> CmdResult {
    match cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Simulate(a) => cmd_simulate(a, provenance),
        Command::Dmp(a) => cmd_dmp(a, provenance),
        Command::Infer(a) => cmd_infer(a, provenance),
        Command::Init(a) => cmd_init(a),
        Command::Train(a) => cmd_train(a, provenance),
        Command::Eval(a) => cmd_eval(a, provenance),
        Command::Experiment(a) => cmd_experiment(a, provenance),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| data_error(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, body: &str) -> CmdResult {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| data_error(format!("{}: {e}", parent.display())))?;
            }
            fs::write(path, body).map_err(|e| data_error(format!("{}: {e}", path.display())))
        }
        None => io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| data_error(format!("stdout: {e}"))),
    }
}

fn load_instance_file(path: &Path, horizon: Option<usize>) -> Result<Instance, Failure> {
    let inst = load_instance(&read(path)?).map_err(|e| data_error(format!("{}: {e}", path.display())))?;
    Ok(match horizon {
        Some(t) => inst.with_horizon(t)?,
        None => inst,
    })
}

fn load_model(ckpt: Option<&Path>, expected: ModelKind) -> Result<Model, Failure> {
    let path = ckpt.ok_or_else(|| usage(format!("--ckpt is required for --model {}", expected)))?;
    let ckpt = Checkpoint::from_json(&read(path)?)?;
    let model = Model::from_checkpoint(&ckpt)?;
    if model.kind() != expected {
        return Err(data_error(format!(
            "checkpoint holds a {} model, expected {expected}",
            model.kind()
        )));
    }
    Ok(model)
}

fn write_marginals(out: Option<&Path>, m: &MarginalTrajectory, provenance: &str) -> CmdResult {
    if !m.is_finite() {
        return Err(Error::NonFinite("marginals".into()).into());
    }
    emit(out, &m.to_csv(Some(provenance)))
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    let mut config: DatasetConfig =
        serde_json::from_str(&read(&a.config)?).map_err(|e| data_error(format!("{}: {e}", a.config.display())))?;
    if let Some(runs) = a.runs {
        config.n_runs = runs;
    }
    if let Some(t) = a.horizon {
        config.horizon = t;
    }
    if let Some(path) = &a.edge_list {
        let (topology, _) = read_edge_list(&read(path)?)?;
        config.graph = GraphSource::Given {
            n: topology.n,
            pairs: topology.pairs,
        };
    }
    let data = make_dataset(&config, a.data_seed)?;
    data.save(&a.out)?;
    eprintln!(
        "wrote {} instances ({} train / {} val / {} test) to {}",
        data.instances.len(),
        data.split(Split::Train).len(),
        data.split(Split::Val).len(),
        data.split(Split::Test).len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_simulate(a: SimulateArgs, provenance: &str) -> CmdResult {
    if a.runs == 0 {
        return Err(usage("--runs must be positive"));
    }
    let inst = load_instance_file(&a.io.instance, a.io.horizon)?;
    let m = estimate_marginals(&inst, a.runs, a.mc_seed);
    write_marginals(a.io.out.as_deref(), &m, provenance)
}

fn cmd_dmp(a: DmpArgs, provenance: &str) -> CmdResult {
    let inst = load_instance_file(&a.io.instance, a.io.horizon)?;
    write_marginals(a.io.out.as_deref(), &dmp_run(&inst), provenance)
}

fn predict(
    method: Method,
    ckpt: Option<&Path>,
    identity: bool,
    inst: &Instance,
) -> Result<MarginalTrajectory, Failure> {
    if identity && method != Method::Nedmp {
        return Err(usage("--identity-refine applies to --model nedmp only"));
    }
    match method.model_kind() {
        None => Ok(dmp_run(inst)),
        Some(ModelKind::Nedmp) => {
            let model = load_model(ckpt, ModelKind::Nedmp)?;
            let mode = if identity {
                Refinement::Identity
            } else {
                Refinement::Learned
            };
            Ok(nedmp_run(inst, &model, mode)?)
        }
        Some(kind) => Ok(load_model(ckpt, kind)?.predict(inst)?),
    }
}

fn cmd_infer(a: InferArgs, provenance: &str) -> CmdResult {
    let inst = load_instance_file(&a.io.instance, a.io.horizon)?;
    let m = predict(a.model.into(), a.ckpt.as_deref(), a.identity_refine, &inst)?;
    write_marginals(a.io.out.as_deref(), &m, provenance)
}

fn cmd_init(a: InitArgs) -> CmdResult {
    let method: Method = a.model.into();
    let kind = method
        .model_kind()
        .ok_or_else(|| usage("dmp has no trainable weights"))?;
    if a.hidden == 0 {
        return Err(usage("--hidden must be positive"));
    }
    let model = Model::new(kind, ModelSpec { hidden: a.hidden }, a.train_seed)?;
    emit(Some(&a.out), &model.to_checkpoint().to_json())
}

fn cmd_train(a: TrainArgs, provenance: &str) -> CmdResult {
    let method: Method = a.model.into();
    let kind = method
        .model_kind()
        .ok_or_else(|| usage("dmp has no trainable weights"))?;
    let mut config = match &a.config {
        Some(path) => serde_json::from_str::<TrainConfig>(&read(path)?)
            .map_err(|e| data_error(format!("{}: {e}", path.display())))?,
        None => TrainConfig::default(),
    };
    if let Some(l) = a.lambda {
        config.lambda = l;
    }
    if let Some(e) = a.epochs {
        config.max_epochs = e;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    let data = Dataset::load(&a.dataset)?;
    let (tr, va) = (data.split(Split::Train), data.split(Split::Val));
    let out = train_with(kind, &tr, &va, &config, a.train_seed, |e| {
        eprintln!(
            "epoch {:>3}  train {:.6}  val {:.6}  lr {:.2e}",
            e.epoch, e.train_loss, e.val_loss, e.lr
        );
    })?;
    emit(Some(&a.out), &out.model.to_checkpoint().to_json())?;
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("log.csv"));
    emit(Some(&log_path), &log_to_csv(&out.log, Some(provenance)))?;
    eprintln!(
        "best epoch {} of {}; wrote {}",
        out.best_epoch,
        out.log.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs, provenance: &str) -> CmdResult {
    if let (Some(pred), Some(labels)) = (&a.pred, &a.labels) {
        let p = MarginalTrajectory::from_csv(BufReader::new(read(pred)?.as_bytes()))?;
        let q = MarginalTrajectory::from_csv(BufReader::new(read(labels)?.as_bytes()))?;
        let l1 = l1_metric(&p, &q)?;
        return emit(a.out.as_deref(), &format!("# {provenance}\nl1\n{l1:.6}\n"));
    }
    let method: Method = a
        .model
        .ok_or_else(|| usage("eval needs --model with --dataset, or --pred with --labels"))?
        .into();
    let dir = a.dataset.as_deref().ok_or_else(|| usage("eval needs --dataset"))?;
    let data = Dataset::load(dir)?;
    let insts: Vec<&Instance> = match a.split {
        SplitArg::All => data.instances.iter().collect(),
        SplitArg::Train => data.split(Split::Train),
        SplitArg::Val => data.split(Split::Val),
        SplitArg::Test => data.split(Split::Test),
    };
    if insts.is_empty() {
        return Err(Error::EmptySplit("evaluation").into());
    }
    let model = match method.model_kind() {
        Some(kind) => Some(load_model(a.ckpt.as_deref(), kind)?),
        None => None,
    };
    let mut body = format!("# {provenance}\ninstance,l1\n");
    let mut total = 0.0;
    for (k, inst) in insts.iter().enumerate() {
        let pred = match (&model, a.identity_refine) {
            (Some(m), true) if m.kind() == ModelKind::Nedmp => nedmp_run(inst, m, Refinement::Identity)?,
            (_, true) => return Err(usage("--identity-refine applies to --model nedmp only")),
            (Some(m), false) => Predictor::Learned(m).predict(inst)?,
            (None, false) => dmp_run(inst),
        };
        let labels = inst
            .labels
            .as_ref()
            .ok_or_else(|| data_error("instance without labels"))?;
        let l1 = l1_metric(&pred, labels)?;
        if !l1.is_finite() {
            return Err(Error::NonFinite(format!("L1 of instance {k}")).into());
        }
        total += l1;
        let _ = writeln!(body, "{k},{l1:.6}");
    }
    let _ = writeln!(body, "mean,{:.6}", total / insts.len() as f64);
    emit(a.out.as_deref(), &body)
}

fn cmd_experiment(a: ExperimentArgs, provenance: &str) -> CmdResult {
    let spec: ExperimentSpec =
        serde_json::from_str(&read(&a.spec)?).map_err(|e| data_error(format!("{}: {e}", a.spec.display())))?;
    spec.validate()?;
    let mut runner = Runner::new(a.data_seed, a.train_seed).with_progress(|msg| eprintln!("{msg}"));
    let results = runner.run(&spec)?;
    let files = write_results(&a.out, &spec, &results, provenance)?;
    eprintln!("wrote {} files to {}", files.len(), a.out.display());
    if !results.failures.is_empty() {
        eprintln!("{} cells failed; see failures.json", results.failures.len());
    }
    Ok(())
}
