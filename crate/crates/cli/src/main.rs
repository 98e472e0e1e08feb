//! `chanprune`: capture activations, rank channels, prune, and report costs.
//!
//! Exit codes: 0 success, 1 usage or domain error, 2 malformed input file,
//! 3 numerical failure.

mod config;
mod run;

use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chanprune_core::cifar::{RecordBuffer, Split};
use chanprune_core::cost::{compare_costs, cost_model};
use chanprune_core::datamatrix::{build_data_matrix_with, sample_indices, sidecar_path, DEFAULT_SAMPLES};
use chanprune_core::preprocess::{fit_zca, fit_zca_relative, gcn, ZcaTransform, ZCA_EPS_REL};
use chanprune_core::{
    eval_classifier, importance_report, load_model, nin, prune_layer, save_model, solve_group_sparse, DataMatrix, Error,
    Mode, PruneSpec, SolverConfig, Tensor,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "chanprune", version, about = "Channel pruning for stored CNN models")]
pub struct Cli {
    /// JSON file supplying flags (or a previous run manifest); command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample images, run the model, and store a layer's activations as a data matrix
    Capture(CaptureArgs),
    /// Rank a data matrix's channels by importance factor (CSV)
    Importance(ImportanceArgs),
    /// Remove K channels from a layer and fold the reconstruction into the next conv
    Prune(PruneArgs),
    /// Compare parameter and multiplication counts of two models
    Report(ReportArgs),
    /// Top-1 accuracy of a model on a CIFAR-100 split
    Eval(EvalArgs),
    /// Fit a ZCA whitening transform on GCN-normalized training images
    FitZca(FitZcaArgs),
    /// Write the NIN-style CIFAR model (random weights)
    Nin(NinArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Bottom,
    Top,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum LabelKind {
    Fine,
    Coarse,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct PreprocessArgs {
    /// Apply global contrast normalization to each image
    #[arg(long)]
    gcn: bool,
    /// Apply this ZCA transform after GCN (implies --gcn)
    #[arg(long, value_name = "FILE")]
    zca: Option<PathBuf>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SolverArgs {
    /// Regularization as a fraction of the data's reference weight
    #[arg(long, default_value_t = 0.05)]
    lambda_rel: f32,
    #[arg(long, default_value_t = 1.0)]
    rho: f32,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol_primal: f32,
    #[arg(long, default_value_t = 1e-5)]
    tol_dual: f32,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            lambda_rel: self.lambda_rel,
            rho: self.rho,
            max_iters: self.max_iters,
            tol_primal: self.tol_primal,
            tol_dual: self.tol_dual,
        }
    }
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct CaptureArgs {
    #[arg(long)]
    model: PathBuf,
    /// CIFAR-100 record file, or a directory holding train.bin/test.bin
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    layer: String,
    /// Number of images to sample
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
    #[command(flatten)]
    #[serde(flatten)]
    preprocess: PreprocessArgs,
    /// Output data matrix (.sst); the sidecar goes to <out>.json
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct ImportanceArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out_csv: PathBuf,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Data matrix captured at --layer from --model
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    layer: String,
    /// Number of channels to remove
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Bottom)]
    mode: ModeArg,
    #[command(flatten)]
    #[serde(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_json: PathBuf,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct ReportArgs {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    pruned: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Write here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, value_enum, default_value_t = LabelKind::Fine)]
    labels: LabelKind,
    /// Evaluate only the first N records
    #[arg(long)]
    limit: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    preprocess: PreprocessArgs,
    /// Also write the accuracy as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct FitZcaArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of training images to fit on
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Epsilon relative to the mean covariance eigenvalue
    #[arg(long, default_value_t = ZCA_EPS_REL)]
    epsilon_rel: f64,
    /// Absolute epsilon; overrides --epsilon-rel
    #[arg(long)]
    epsilon: Option<f32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct NinArgs {
    #[arg(long, default_value_t = 100)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Manifest path; weights go to <stem>.bin beside it
    #[arg(long)]
    out: PathBuf,
}

/// A failed command, carrying its exit code class.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
    Write(PathBuf, std::io::Error),
}

impl Failure {
    pub fn write(path: &Path, e: std::io::Error) -> Self {
        Failure::Write(path.to_path_buf(), e)
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(e) if e.is_numeric() => 3,
            Failure::Core(e) if e.is_format() => 2,
            Failure::Core(_) => 1,
            Failure::Write(..) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Write(p, e) => write!(f, "cannot write {}: {e}", p.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::write(path, e))
}

struct Preprocessor {
    gcn: bool,
    zca: Option<ZcaTransform>,
}

impl Preprocessor {
    fn new(args: &PreprocessArgs) -> Result<Self, Failure> {
        let zca = args.zca.as_ref().map(ZcaTransform::load).transpose()?;
        Ok(Preprocessor {
            gcn: args.gcn || zca.is_some(),
            zca,
        })
    }

    fn apply(&self, pixels: Tensor) -> chanprune_core::Result<Tensor> {
        let x = if self.gcn { gcn(&pixels) } else { pixels };
        match &self.zca {
            Some(z) => z.apply(&x),
            None => Ok(x),
        }
    }
}

fn capture(a: &CaptureArgs) -> Result<(), Failure> {
    let started = run::now();
    let g = load_model(&a.model)?;
    let pre = Preprocessor::new(&a.preprocess)?;
    let records = RecordBuffer::open(&a.data, a.split.into())?;
    let d = build_data_matrix_with(&g, &a.layer, records.len(), |i| pre.apply(records.record(i)?.pixels), a.n, a.seed)?;
    d.save(&a.out)?;
    log::info!("captured {} x {} at '{}' from {} images", d.rows(), d.channels, a.layer, a.n);
    let side = sidecar_path(&a.out);
    run::write(
        "capture",
        a,
        started,
        &[&a.out, &side],
        json!({ "rows": d.rows(), "channels": d.channels, "height": d.height, "width": d.width }),
    )?;
    Ok(())
}

fn importance(a: &ImportanceArgs) -> Result<(), Failure> {
    let started = run::now();
    let d = DataMatrix::load(&a.matrix)?;
    let coeffs = solve_group_sparse(&d, &a.solver.config())?;
    if !coeffs.converged {
        log::warn!("solver stopped after {} iterations without meeting tolerances", coeffs.iters_used);
    }
    let report = importance_report(&coeffs, &d.layer);
    write_file(&a.out_csv, &report.to_csv())?;
    run::write(
        "importance",
        a,
        started,
        &[&a.out_csv],
        json!({
            "layer": d.layer,
            "converged": coeffs.converged,
            "iters_used": coeffs.iters_used,
            "final_objective": coeffs.objective_trace.last(),
        }),
    )?;
    Ok(())
}

fn prune(a: &PruneArgs) -> Result<(), Failure> {
    let started = run::now();
    let g = load_model(&a.model)?;
    let d = DataMatrix::load(&a.matrix)?;
    if d.layer != a.layer {
        return Err(Failure::Usage(format!(
            "{} was captured at '{}', not '{}'",
            a.matrix.display(),
            d.layer,
            a.layer
        )));
    }
    let c = g.conv(&a.layer)?.out_channels;
    if a.k == 0 || a.k >= c {
        return Err(Failure::Usage(format!("--k {} must satisfy 1 <= k < {c} for '{}'", a.k, a.layer)));
    }
    let cfg = a.solver.config();
    let coeffs = solve_group_sparse(&d, &cfg)?;
    if !coeffs.converged {
        log::warn!("solver stopped after {} iterations without meeting tolerances", coeffs.iters_used);
    }
    let spec = PruneSpec {
        layer: a.layer.clone(),
        k: a.k,
        mode: match a.mode {
            ModeArg::Bottom => Mode::Bottom,
            ModeArg::Top => Mode::Top,
        },
        report: importance_report(&coeffs, &a.layer),
    };
    let res = prune_layer(&g, &spec, &d)?;
    save_model(&res.model, &a.out_model)?;
    let summary = res.summary(cfg.lambda_rel, d.seed);
    write_file(&a.out_json, &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"))?;
    log::info!("pruned {} of {c} channels from '{}', recon_error {}", a.k, a.layer, res.recon_error);
    run::write(
        "prune",
        a,
        started,
        &[&a.out_json, &a.out_model],
        json!({ "recon_error": res.recon_error, "converged": coeffs.converged, "iters_used": coeffs.iters_used }),
    )?;
    Ok(())
}

fn report(a: &ReportArgs) -> Result<(), Failure> {
    let started = run::now();
    let b = cost_model(&load_model(&a.baseline)?)?;
    let p = cost_model(&load_model(&a.pruned)?)?;
    let cmp = compare_costs(&b, &p)?;
    let text = match a.format {
        Format::Csv => cmp.to_csv(),
        Format::Json => serde_json::to_string_pretty(&cmp).expect("comparison serializes") + "\n",
    };
    match &a.out {
        Some(out) => {
            write_file(out, &text)?;
            run::write("report", a, started, &[out], json!({}))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let started = run::now();
    let g = load_model(&a.model)?;
    let pre = Preprocessor::new(&a.preprocess)?;
    let records = RecordBuffer::open(&a.data, a.split.into())?;
    let n = a.limit.map_or(records.len(), |l| l.min(records.len()));
    let failed: RefCell<Option<Error>> = RefCell::new(None);
    let samples = (0..n).map_while(|i| {
        let r = records.record(i).and_then(|r| {
            let label = match a.labels {
                LabelKind::Fine => r.fine_label,
                LabelKind::Coarse => r.coarse_label,
            };
            Ok((pre.apply(r.pixels)?, label as usize))
        });
        match r {
            Ok(s) => Some(s),
            Err(e) => {
                *failed.borrow_mut() = Some(e);
                None
            }
        }
    });
    let accuracy = eval_classifier(&g, samples);
    if let Some(e) = failed.into_inner() {
        return Err(e.into());
    }
    let accuracy = accuracy?;
    println!("accuracy {accuracy:.4} on {n} images");
    if let Some(out) = &a.out {
        let body = json!({ "accuracy": accuracy, "samples": n });
        write_file(out, &(serde_json::to_string_pretty(&body).unwrap() + "\n"))?;
        run::write("eval", a, started, &[out], body)?;
    }
    Ok(())
}

fn fit_zca_cmd(a: &FitZcaArgs) -> Result<(), Failure> {
    let started = run::now();
    let records = RecordBuffer::open(&a.data, Split::Train)?;
    let picks = sample_indices(records.len(), a.n, a.seed)?;
    let images = picks
        .iter()
        .map(|&i| Ok(gcn(&records.record(i)?.pixels)))
        .collect::<chanprune_core::Result<Vec<_>>>()?;
    let zca = match a.epsilon {
        Some(eps) => fit_zca(&images, eps)?,
        None => fit_zca_relative(&images, a.epsilon_rel)?,
    };
    zca.save(&a.out)?;
    let side = sidecar_path(&a.out);
    run::write("fit-zca", a, started, &[&a.out, &side], json!({ "epsilon": zca.epsilon }))?;
    Ok(())
}

fn nin_cmd(a: &NinArgs) -> Result<(), Failure> {
    let started = run::now();
    let g = nin::nin_style(a.classes, a.seed)?;
    save_model(&g, &a.out)?;
    run::write("nin", a, started, &[&a.out], json!({}))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match config::merge(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Capture(a) => capture(a),
        Command::Importance(a) => importance(a),
        Command::Prune(a) => prune(a),
        Command::Report(a) => report(a),
        Command::Eval(a) => eval(a),
        Command::FitZca(a) => fit_zca_cmd(a),
        Command::Nin(a) => nin_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
