//! Command-line front end: dataset generation, training, certification,
//! gain estimation, simulation, and model export.
//!
//! Settings come from an optional plain-text configuration file (one
//! `[section]` per subcommand, `key = value` lines, `#` comments) merged
//! with command-line flags; flags win. Unknown keys and sections are
//! rejected. Every command is deterministic given its settings.
//!
//! Exit codes: 0 success, 1 property violation (a bound or certificate
//! does not hold), 2 numerical abort, 64 usage error (bad flags, files,
//! or configuration).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use l2ru::lti::{
    bounded_real_residual, bounded_real_storage, gain_lmi_bisection, hinf_norm,
    spectral_radius_estimate, LtiError, LtiSystem, Trajectory,
};
use l2ru::mlp::Activation;
use l2ru::model::{
    build, certified_gain, forward, init_params, model_from_json, model_to_json, Engine, InitKind,
    ModelError, ModelShape, ParamKind,
};
use l2ru::tank::{generate_dataset, read_dataset, write_dataset, TankError, TankParams};
use l2ru::train::{
    certificate_audit, nrmse, rms_scales, train, Optimizer, TrainConfig, TrainError,
};

const USAGE_EXIT: u8 = 64;
const NUMERICAL_EXIT: u8 = 2;
const VIOLATION_EXIT: u8 = 1;

#[derive(Debug)]
enum CliError {
    /// Bad flags, configuration, or files: exit 64.
    Usage(String),
    /// A certified property failed to hold: exit 1.
    Violation(String),
    /// The computation lost numerical meaning: exit 2.
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => USAGE_EXIT,
            CliError::Violation(_) => VIOLATION_EXIT,
            CliError::Numerical(_) => NUMERICAL_EXIT,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Violation(m) | CliError::Numerical(m) => m,
        }
    }
}

fn from_tank(e: TankError) -> CliError {
    CliError::Usage(e.to_string())
}

fn from_model(e: ModelError) -> CliError {
    match e {
        ModelError::Schema(_) | ModelError::Dimension(_) | ModelError::InvalidGamma(_) => {
            CliError::Usage(e.to_string())
        }
        _ => CliError::Numerical(e.to_string()),
    }
}

fn from_lti(e: LtiError) -> CliError {
    match e {
        LtiError::Dimension(_) => CliError::Usage(e.to_string()),
        LtiError::Unstable { .. } => CliError::Violation(e.to_string()),
        _ => CliError::Numerical(e.to_string()),
    }
}

fn from_train(e: TrainError) -> CliError {
    match e {
        TrainError::NanAbort { .. } => CliError::Numerical(e.to_string()),
        TrainError::GradientAudit { .. } => CliError::Violation(e.to_string()),
        TrainError::Invalid(_) | TrainError::Metric(_) => CliError::Usage(e.to_string()),
        TrainError::Model(m) => from_model(m),
    }
}

// ---------------------------------------------------------------------------
// Configuration file
// ---------------------------------------------------------------------------

const SECTIONS: [&str; 6] = ["gen-data", "train", "certify", "gain", "simulate", "export"];

#[derive(Debug, Default)]
struct FileConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

fn parse_config(text: &str) -> Result<FileConfig, CliError> {
    let mut config = FileConfig::default();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(CliError::Usage(format!(
                    "line {}: unknown section [{name}]; expected one of {}",
                    lineno + 1,
                    SECTIONS.join(", ")
                )));
            }
            if config.sections.contains_key(name) {
                return Err(CliError::Usage(format!(
                    "line {}: duplicate section [{name}]",
                    lineno + 1
                )));
            }
            config.sections.insert(name.to_string(), BTreeMap::new());
            current = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let Some(section) = &current else {
            return Err(CliError::Usage(format!(
                "line {}: `{}` appears before any [section] header",
                lineno + 1,
                key.trim()
            )));
        };
        let entries = config.sections.get_mut(section).expect("section exists");
        let key = key.trim().to_string();
        if entries.contains_key(&key) {
            return Err(CliError::Usage(format!(
                "line {}: duplicate key `{key}` in [{section}]",
                lineno + 1
            )));
        }
        entries.insert(key, value.trim().to_string());
    }
    Ok(config)
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            parse_config(&text)
        }
    }
}

/// One subcommand's slice of the configuration file, with typed access
/// and strict unknown-key rejection.
struct Section<'a> {
    name: &'static str,
    entries: Option<&'a BTreeMap<String, String>>,
    known: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn new(config: &'a FileConfig, name: &'static str) -> Self {
        Self {
            name,
            entries: config.sections.get(name),
            known: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a str> {
        self.known.push(key);
        self.entries.and_then(|e| e.get(key)).map(String::as_str)
    }

    fn get<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| {
                CliError::Usage(format!("[{}] {key} = {v}: {e}", self.name))
            }),
        }
    }

    /// Errors on any key this command never asked about.
    fn finish(self) -> Result<(), CliError> {
        if let Some(entries) = self.entries {
            for key in entries.keys() {
                if !self.known.contains(&key.as_str()) {
                    return Err(CliError::Usage(format!(
                        "unknown key `{key}` in [{}]; known keys: {}",
                        self.name,
                        self.known.join(", ")
                    )));
                }
            }
        }
        Ok(())
    }
}

fn require<T>(value: Option<T>, name: &str, section: &str) -> Result<T, CliError> {
    value.ok_or_else(|| {
        CliError::Usage(format!(
            "missing required setting `{name}` (flag --{name} or key in [{section}])"
        ))
    })
}

// ---------------------------------------------------------------------------
// Command-line surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "l2ru",
    version,
    about = "Structured state-space models with a prescribed worst-case gain",
    disable_help_subcommand = true
)]
struct Cli {
    /// Plain-text configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the cascaded three-tank benchmark and write a dataset.
    GenData(GenDataArgs),
    /// Fit a model to a dataset; writes model and report files.
    Train(TrainArgs),
    /// Re-verify the certificates stored in a model, or certify a bare
    /// linear system at a given gain level.
    Certify(CertifyArgs),
    /// Estimate the worst-case gain of a linear system file.
    Gain(GainArgs),
    /// Run a stored model over a dataset and write predictions.
    Simulate(SimulateArgs),
    /// Flatten a stored model into tidy CSV plus a JSON summary.
    Export(ExportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Metadata path; per-sequence CSV files land beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sequences: Option<usize>,
    /// Samples per sequence.
    #[arg(long)]
    samples: Option<usize>,
    /// Sampling period in seconds.
    #[arg(long)]
    ts: Option<f64>,
    /// Standard deviation of the additive output noise.
    #[arg(long)]
    noise_std: Option<f64>,
    /// Lower edge of the piecewise-constant pump voltage.
    #[arg(long)]
    v_min: Option<f64>,
    /// Upper edge of the piecewise-constant pump voltage.
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset metadata file produced by gen-data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output path for the frozen model JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stem for the report files (<stem>.csv and <stem>.json).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Layer parametrization: psi or kappa.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    /// State dimension shared by every layer.
    #[arg(long)]
    width: Option<usize>,
    /// Comma-separated hidden widths of the stage nonlinearity; empty for
    /// none.
    #[arg(long)]
    mlp_hidden: Option<String>,
    /// Stage activation: tanh or relu.
    #[arg(long)]
    activation: Option<String>,
    /// Prescribed worst-case gain of the trained model.
    #[arg(long)]
    gamma_hat: Option<f64>,
    /// Initialization: random or long-memory.
    #[arg(long)]
    init: Option<String>,
    /// Memory knob of the long-memory initialization.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Update rule: adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    /// Windows per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Window length for truncated-sequence gradients.
    #[arg(long)]
    truncation_length: Option<usize>,
    /// Drives initialization and the gradient-audit coordinate draw.
    #[arg(long)]
    seed: Option<u64>,
    /// Audit gradients against finite differences every N epochs; 0 off.
    #[arg(long)]
    grad_check_interval: Option<usize>,
}

#[derive(Args)]
struct CertifyArgs {
    /// Model JSON written by train.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Bare linear system JSON ({"A": [[..]], "B": ..., "C": ..., "D": ...}).
    #[arg(long)]
    system: Option<PathBuf>,
    /// Gain level to certify a bare system at.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct GainArgs {
    /// Linear system JSON file.
    #[arg(long)]
    system: Option<PathBuf>,
    /// Relative tolerance of the estimate.
    #[arg(long)]
    tol: Option<f64>,
    /// Estimation route: grid (frequency sweep) or lmi (feasibility
    /// bisection).
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset metadata file; supplies inputs, targets, and the
    /// normalization split.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output CSV of predictions.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation engine: recursive or scan.
    #[arg(long)]
    engine: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Stem for the exported files (<stem>_matrices.csv,
    /// <stem>_summary.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn read_system(path: &Path) -> Result<LtiSystem, CliError> {
    let text = read_file(path)?;
    let sys: LtiSystem = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    sys.validated().map_err(from_lti)
}

fn cmd_gen_data(args: GenDataArgs, config: &FileConfig) -> Result<(), CliError> {
    let mut sec = Section::new(config, "gen-data");
    let out = args.out.or(sec.get::<PathBuf>("out")?);
    let sequences = args.sequences.or(sec.get("sequences")?).unwrap_or(1);
    let samples = args.samples.or(sec.get("samples")?).unwrap_or(2000);
    let ts = args.ts.or(sec.get("ts")?).unwrap_or(l2ru::tank::DEFAULT_TS);
    let noise_std = args.noise_std.or(sec.get("noise_std")?).unwrap_or(0.1);
    let v_min = args.v_min.or(sec.get("v_min")?).unwrap_or(10.0);
    let v_max = args.v_max.or(sec.get("v_max")?).unwrap_or(100.0);
    let seed = args.seed.or(sec.get("seed")?).unwrap_or(0);
    sec.finish()?;
    let out = require(out, "out", "gen-data")?;

    let params = TankParams::default();
    let ds = generate_dataset(&params, sequences, samples, ts, noise_std, (v_min, v_max), seed)
        .map_err(from_tank)?;
    let files = write_dataset(&out, &ds, ts, Some(&params)).map_err(from_tank)?;
    println!(
        "wrote {} sequence(s) x {} samples (train split {}) to {} (+{} csv)",
        sequences,
        samples,
        ds.split_index,
        out.display(),
        files.len()
    );
    Ok(())
}

fn parse_kind(s: &str) -> Result<ParamKind, CliError> {
    match s {
        "psi" => Ok(ParamKind::Psi),
        "kappa" => Ok(ParamKind::Kappa),
        other => Err(CliError::Usage(format!(
            "kind must be psi or kappa, got {other}"
        ))),
    }
}

fn parse_activation(s: &str) -> Result<Activation, CliError> {
    match s {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => Err(CliError::Usage(format!(
            "activation must be tanh or relu, got {other}"
        ))),
    }
}

fn parse_optimizer(s: &str) -> Result<Optimizer, CliError> {
    match s {
        "adam" => Ok(Optimizer::Adam),
        "sgd" => Ok(Optimizer::Sgd),
        other => Err(CliError::Usage(format!(
            "optimizer must be adam or sgd, got {other}"
        ))),
    }
}

fn parse_hidden(s: &str) -> Result<Vec<usize>, CliError> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Usage(format!("mlp_hidden entry `{part}`: {e}")))
        })
        .collect()
}

fn cmd_train(args: TrainArgs, config: &FileConfig) -> Result<(), CliError> {
    let mut sec = Section::new(config, "train");
    let data = args.data.or(sec.get("data")?);
    let out = args.out.or(sec.get("out")?);
    let report = args.report.or(sec.get::<PathBuf>("report")?);
    let kind_name = args
        .kind
        .or(sec.get("kind")?)
        .unwrap_or_else(|| "psi".into());
    let layers = args.layers.or(sec.get("layers")?).unwrap_or(2);
    let width = args.width.or(sec.get("width")?).unwrap_or(8);
    let hidden_spec = args.mlp_hidden.or(sec.get("mlp_hidden")?);
    let activation_name = args
        .activation
        .or(sec.get("activation")?)
        .unwrap_or_else(|| "tanh".into());
    let gamma_hat = args.gamma_hat.or(sec.get("gamma_hat")?);
    let init_name = args
        .init
        .or(sec.get("init")?)
        .unwrap_or_else(|| "random".into());
    let alpha = args.alpha.or(sec.get("alpha")?).unwrap_or(4.1);
    let defaults = TrainConfig::default();
    let train_config = TrainConfig {
        epochs: args.epochs.or(sec.get("epochs")?).unwrap_or(defaults.epochs),
        learning_rate: args
            .learning_rate
            .or(sec.get("learning_rate")?)
            .unwrap_or(defaults.learning_rate),
        optimizer: match args.optimizer.or(sec.get("optimizer")?) {
            Some(s) => parse_optimizer(&s)?,
            None => defaults.optimizer,
        },
        adam_betas: defaults.adam_betas,
        batch_size: args
            .batch_size
            .or(sec.get("batch_size")?)
            .unwrap_or(defaults.batch_size),
        truncation_length: args
            .truncation_length
            .or(sec.get("truncation_length")?)
            .unwrap_or(defaults.truncation_length),
        seed: args.seed.or(sec.get("seed")?).unwrap_or(defaults.seed),
        grad_check_interval: args
            .grad_check_interval
            .or(sec.get("grad_check_interval")?)
            .unwrap_or(defaults.grad_check_interval),
    };
    sec.finish()?;

    let data = require(data, "data", "train")?;
    let out = require(out, "out", "train")?;
    let report_stem =
        report.unwrap_or_else(|| out.with_extension("").with_extension("report"));
    let kind = parse_kind(&kind_name)?;
    let mlp_hidden = match hidden_spec {
        Some(s) => parse_hidden(&s)?,
        None => vec![2 * width, 2 * width],
    };
    let activation = parse_activation(&activation_name)?;
    let gamma_hat = require(gamma_hat, "gamma_hat", "train")?;
    let init = match init_name.as_str() {
        "random" => InitKind::Random,
        "long-memory" => InitKind::LongMemory { alpha },
        other => {
            return Err(CliError::Usage(format!(
                "init must be random or long-memory, got {other}"
            )))
        }
    };

    let (dataset, _meta) = read_dataset(&data).map_err(from_tank)?;
    let shape = ModelShape {
        kind,
        layer_count: layers,
        width,
        input_dim: dataset.inputs[0].dim(),
        output_dim: dataset.outputs[0].dim(),
        mlp_hidden,
        activation,
        gamma_hat,
    };
    let params = init_params(&shape, init, train_config.seed).map_err(from_model)?;
    let (trained, report) = train(&params, &dataset, &train_config).map_err(from_train)?;
    let model = build(&trained).map_err(from_model)?;
    write_file(&out, &model_to_json(&model).map_err(from_model)?)?;
    let csv_path = report_stem.with_extension("csv");
    let json_path = report_stem.with_extension("json");
    write_file(&csv_path, &report.to_csv())?;
    write_file(&json_path, &report.to_json())?;
    let last = report.epochs.last().expect("report has a baseline record");
    println!(
        "epoch {}: train {:.6e}, val {:.6e}, nrmse {:?}, certificates {}",
        last.epoch,
        last.train_loss,
        last.val_loss,
        last.nrmse,
        if last.cert_ok { "ok" } else { "VIOLATED" }
    );
    println!(
        "wrote {}, {}, {}",
        out.display(),
        csv_path.display(),
        json_path.display()
    );
    if !report.epochs.iter().all(|r| r.cert_ok) {
        return Err(CliError::Violation(
            "a certificate audit failed during training".into(),
        ));
    }
    Ok(())
}

fn cmd_certify(args: CertifyArgs, config: &FileConfig) -> Result<(), CliError> {
    let mut sec = Section::new(config, "certify");
    let model = args.model.or(sec.get::<PathBuf>("model")?);
    let system = args.system.or(sec.get::<PathBuf>("system")?);
    let gamma = args.gamma.or(sec.get("gamma")?);
    sec.finish()?;

    match (model, system) {
        (Some(path), None) => {
            let model = model_from_json(&read_file(&path)?).map_err(from_model)?;
            for (i, layer) in model.layers.iter().enumerate() {
                let residual = layer.cert.residual(&layer.sys).map_err(from_lti)?;
                println!(
                    "layer {}: gamma {:.9}, zeta {:.9}, certificate residual {:.3e}",
                    i + 1,
                    layer.gamma,
                    layer.zeta,
                    residual
                );
            }
            let budget = certified_gain(&model).map_err(from_model)?;
            println!(
                "gain budget {:.12} against prescribed {:.12}",
                budget, model.gamma_hat
            );
            if certificate_audit(&model).map_err(from_train)? {
                println!("certified");
                Ok(())
            } else {
                println!("NOT certified");
                Err(CliError::Violation(format!(
                    "stored certificates of {} do not verify",
                    path.display()
                )))
            }
        }
        (None, Some(path)) => {
            let gamma = require(gamma, "gamma", "certify")?;
            let sys = read_system(&path)?;
            match bounded_real_storage(&sys, gamma).map_err(from_lti)? {
                Some(p) => {
                    let residual = bounded_real_residual(&sys, &p, gamma).map_err(from_lti)?;
                    println!("certificate residual {residual:.3e}");
                    println!("certified at gamma {gamma}");
                    Ok(())
                }
                None => {
                    println!("NOT certified at gamma {gamma}");
                    Err(CliError::Violation(format!(
                        "no certificate for {} at gamma {gamma}",
                        path.display()
                    )))
                }
            }
        }
        _ => Err(CliError::Usage(
            "certify needs exactly one of --model or --system".into(),
        )),
    }
}

fn cmd_gain(args: GainArgs, config: &FileConfig) -> Result<(), CliError> {
    let mut sec = Section::new(config, "gain");
    let system = args.system.or(sec.get::<PathBuf>("system")?);
    let tol = args.tol.or(sec.get("tol")?).unwrap_or(1e-6);
    let method = args
        .method
        .or(sec.get("method")?)
        .unwrap_or_else(|| "grid".into());
    sec.finish()?;
    let system = require(system, "system", "gain")?;

    let sys = read_system(&system)?;
    let (rho, stable) = spectral_radius_estimate(sys.a());
    if !stable {
        return Err(CliError::Violation(format!(
            "state matrix spectral radius {rho:.6} is not below 1; the worst-case gain is unbounded"
        )));
    }
    let gain = match method.as_str() {
        "grid" => hinf_norm(&sys, tol).map_err(from_lti)?,
        "lmi" => gain_lmi_bisection(&sys, tol).map_err(from_lti)?,
        other => {
            return Err(CliError::Usage(format!(
                "method must be grid or lmi, got {other}"
            )))
        }
    };
    println!("hinf {gain:.9}");
    Ok(())
}

fn cmd_simulate(args: SimulateArgs, config: &FileConfig) -> Result<(), CliError> {
    let mut sec = Section::new(config, "simulate");
    let model_path = args.model.or(sec.get::<PathBuf>("model")?);
    let data = args.data.or(sec.get::<PathBuf>("data")?);
    let out = args.out.or(sec.get::<PathBuf>("out")?);
    let engine_name = args
        .engine
        .or(sec.get("engine")?)
        .unwrap_or_else(|| "recursive".into());
    sec.finish()?;
    let model_path = require(model_path, "model", "simulate")?;
    let data = require(data, "data", "simulate")?;
    let out = require(out, "out", "simulate")?;
    let engine = match engine_name.as_str() {
        "recursive" => Engine::Recursive,
        "scan" => Engine::Scan,
        other => {
            return Err(CliError::Usage(format!(
                "engine must be recursive or scan, got {other}"
            )))
        }
    };

    let model = model_from_json(&read_file(&model_path)?).map_err(from_model)?;
    let (dataset, meta) = read_dataset(&data).map_err(from_tank)?;
    if dataset.inputs[0].dim() != model.e.cols() || dataset.outputs[0].dim() != model.h.rows() {
        return Err(CliError::Usage(format!(
            "dataset channels ({} in, {} out) do not match the model ({} in, {} out)",
            dataset.inputs[0].dim(),
            dataset.outputs[0].dim(),
            model.e.cols(),
            model.h.rows()
        )));
    }
    let (input_scales, output_scales) = rms_scales(&dataset).map_err(from_train)?;

    let mut csv = String::from("seq,t");
    for c in &meta.input_columns {
        let _ = write!(csv, ",{c}");
    }
    for c in &meta.output_columns {
        let _ = write!(csv, ",{c}");
    }
    for c in &meta.output_columns {
        let _ = write!(csv, ",pred_{c}");
    }
    csv.push_str(",split_tag\n");

    let mut val_pred_rows: Vec<Vec<f64>> = Vec::new();
    let mut val_tgt_rows: Vec<Vec<f64>> = Vec::new();
    for (s, (u, y)) in dataset.inputs.iter().zip(&dataset.outputs).enumerate() {
        let scaled_rows: Vec<Vec<f64>> = (0..u.len())
            .map(|k| {
                u.sample(k)
                    .iter()
                    .zip(&input_scales)
                    .map(|(v, sc)| v / sc)
                    .collect()
            })
            .collect();
        let u_scaled = Trajectory::from_rows(&scaled_rows)
            .map_err(|e| CliError::Usage(format!("input sequence {s}: {e}")))?;
        let pred_scaled = forward(&model, &u_scaled, engine).map_err(from_model)?;
        for k in 0..u.len() {
            let pred: Vec<f64> = pred_scaled
                .sample(k)
                .iter()
                .zip(&output_scales)
                .map(|(v, sc)| v * sc)
                .collect();
            let _ = write!(csv, "{s},{}", k as f64 * meta.ts);
            for v in u.sample(k) {
                let _ = write!(csv, ",{v}");
            }
            for v in y.sample(k) {
                let _ = write!(csv, ",{v}");
            }
            for v in &pred {
                let _ = write!(csv, ",{v}");
            }
            let tag = if k < dataset.train_len(s) { "train" } else { "val" };
            csv.push_str(&format!(",{tag}\n"));
            if k >= dataset.train_len(s) {
                val_pred_rows.push(pred);
                val_tgt_rows.push(y.sample(k).to_vec());
            }
        }
    }
    write_file(&out, &csv)?;
    let val_pred = Trajectory::from_rows(&val_pred_rows)
        .map_err(|e| CliError::Usage(format!("validation rows: {e}")))?;
    let val_tgt = Trajectory::from_rows(&val_tgt_rows)
        .map_err(|e| CliError::Usage(format!("validation rows: {e}")))?;
    let scores = nrmse(&val_pred, &val_tgt).map_err(from_train)?;
    println!(
        "simulated {} sequence(s); validation nrmse {:?}; wrote {}",
        dataset.inputs.len(),
        scores,
        out.display()
    );
    Ok(())
}

fn push_matrix(csv: &mut String, object: &str, layer: usize, m: &l2ru::numerics::Matrix) {
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let _ = writeln!(csv, "{object},{layer},{r},{c},{}", m[(r, c)]);
        }
    }
}

fn cmd_export(args: ExportArgs, config: &FileConfig) -> Result<(), CliError> {
    let mut sec = Section::new(config, "export");
    let model_path = args.model.or(sec.get::<PathBuf>("model")?);
    let out = args.out.or(sec.get::<PathBuf>("out")?);
    sec.finish()?;
    let model_path = require(model_path, "model", "export")?;
    let out = require(out, "out", "export")?;

    let model = model_from_json(&read_file(&model_path)?).map_err(from_model)?;
    let mut csv = String::from("object,layer,row,col,value\n");
    push_matrix(&mut csv, "E", 0, &model.e);
    push_matrix(&mut csv, "H", 0, &model.h);
    for (i, layer) in model.layers.iter().enumerate() {
        let k = i + 1;
        push_matrix(&mut csv, "A", k, layer.sys.a());
        push_matrix(&mut csv, "B", k, layer.sys.b());
        push_matrix(&mut csv, "C", k, layer.sys.c());
        push_matrix(&mut csv, "D", k, layer.sys.d());
        push_matrix(&mut csv, "P", k, &layer.cert.p);
        for (j, w) in layer.mlp.weights.iter().enumerate() {
            push_matrix(&mut csv, &format!("W{}", j + 1), k, w);
        }
        for (j, b) in layer.mlp.biases.iter().enumerate() {
            for (r, v) in b.iter().enumerate() {
                let _ = writeln!(csv, "b{},{k},{r},0,{v}", j + 1);
            }
        }
    }
    let matrices = out.with_file_name(format!(
        "{}_matrices.csv",
        out.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    let summary_path = out.with_file_name(format!(
        "{}_summary.json",
        out.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    write_file(&matrices, &csv)?;
    let summary = serde_json::json!({
        "gamma_hat": model.gamma_hat,
        "kind": model.kind,
        "input_dim": model.e.cols(),
        "output_dim": model.h.rows(),
        "width": model.e.rows(),
        "layers": model.layers.iter().map(|l| serde_json::json!({
            "state_dim": l.sys.state_dim(),
            "gamma": l.gamma,
            "zeta": l.zeta,
            "activation": l.mlp.activation,
        })).collect::<Vec<_>>(),
        "certified_gain": certified_gain(&model).map_err(from_model)?,
    });
    write_file(
        &summary_path,
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    println!(
        "wrote {} and {}",
        matrices.display(),
        summary_path.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args, &config),
        Command::Train(args) => cmd_train(args, &config),
        Command::Certify(args) => cmd_certify(args, &config),
        Command::Gain(args) => cmd_gain(args, &config),
        Command::Simulate(args) => cmd_simulate(args, &config),
        Command::Export(args) => cmd_export(args, &config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(USAGE_EXIT)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
