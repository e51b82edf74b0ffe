//! `ernn` — train and inspect equilibrated recurrent cells.
//!
//! Subcommands: `gen` (toy random-walk dataset), `train`, `eval`,
//! `diagnose` (stability/discriminability/η/contraction CSVs), and `phi`
//! (equilibrium-map sweep). Every flag can also be supplied through a
//! flat `key=value` file via `--config`; explicit flags win.
//!
//! Exit codes: 0 success, 2 usage error, 3 data/format error,
//! 4 numerical divergence.

mod config;
mod svg;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use ernn::cells::{Activation, CellKind, ModelConfig};
use ernn::checkpoint::{load_checkpoint_file, save_checkpoint_file};
use ernn::data::{gen_random_walks, load_csv_file, split, write_csv_file, SequenceDataset};
use ernn::diagnostics::{
    contraction_report, discriminability_trace, eta_report, model_distance_trace,
    write_contraction_csv, write_eta_csv, write_h1_csv, write_h2_csv, ContractionRow, EtaReport,
};
use ernn::fixed_point::{phi_curve, write_phi_csv, PhiPoint};
use ernn::train::{train, write_records_csv, TrainConfig};
use ernn::{evaluate, ErnnParams, Error};

use config::FileConfig;
use svg::{line_chart, Series};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) => EXIT_USAGE,
            Error::Format { .. } | Error::Io(_) | Error::ShapeMismatch(_) => EXIT_DATA,
            Error::Diverged { .. }
            | Error::NonFinite(_)
            | Error::SingularSystem { .. }
            | Error::UnboundedDerivative => EXIT_NUMERIC,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

#[derive(Clone, Copy, Debug)]
struct CellArg(CellKind);

impl FromStr for CellArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rnn" => Ok(CellArg(CellKind::VanillaRnn)),
            "ernn-toy" => Ok(CellArg(CellKind::ErnnToy)),
            "ernn" => Ok(CellArg(CellKind::ErnnExemplar)),
            "fastrnn" => Ok(CellArg(CellKind::FastRnn)),
            other => Err(format!(
                "unknown cell {other:?} (expected rnn, ernn-toy, ernn, or fastrnn)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ActArg(Activation);

impl FromStr for ActArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Activation::parse(s)
            .map(ActArg)
            .ok_or_else(|| format!("unknown activation {s:?} (expected tanh or relu)"))
    }
}

#[derive(Parser)]
#[command(
    name = "ernn",
    version,
    about = "Equilibrated recurrent cells: dataset generation, training, evaluation, diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the 2-D random-walk classification dataset.
    Gen(GenArgs),
    /// Train a cell on a sequence CSV and write a checkpoint.
    Train(TrainArgs),
    /// Print the accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Emit stability / discriminability / eta / contraction CSVs.
    Diagnose(DiagnoseArgs),
    /// Sweep the equilibrium map phi(alpha) of h = tanh(h + alpha).
    Phi(PhiArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generate the toy random-walk task (the only generator).
    #[arg(long)]
    toy: bool,
    /// Walks per class.
    #[arg(long)]
    n: Option<usize>,
    /// Timesteps per walk.
    #[arg(long = "T")]
    t: Option<usize>,
    /// Step scale of class 0.
    #[arg(long)]
    sigma0: Option<f64>,
    /// Step scale of class 1.
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; a `<out>.manifest` is written alongside.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV (sequence schema).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Cell: rnn, ernn-toy, ernn (exemplar), or fastrnn.
    #[arg(long)]
    cell: Option<CellArg>,
    /// Inner fixed-point steps per timestep.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Hidden dimension.
    #[arg(long)]
    hidden: Option<usize>,
    /// Activation override (defaults: tanh for rnn/ernn-toy, relu otherwise).
    #[arg(long)]
    activation: Option<ActArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs between halvings of the learning rate.
    #[arg(long = "half-period")]
    half_period: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Initial value of every eta step size.
    #[arg(long)]
    eta0: Option<f64>,
    /// Optional global-norm gradient clip.
    #[arg(long)]
    clip: Option<f64>,
    /// Fraction of --data held out for evaluation (stratified).
    #[arg(long = "holdout-frac")]
    holdout_frac: Option<f64>,
    /// Explicit evaluation CSV (mutually exclusive with --holdout-frac).
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Final checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch records CSV (default: `<out stem>.records.csv`).
    #[arg(long)]
    records: Option<PathBuf>,
    /// Directory for per-epoch checkpoints.
    #[arg(long = "keep-checkpoints")]
    keep_checkpoints: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for the emitted CSVs.
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Samples used for the contraction statistics.
    #[arg(long)]
    samples: Option<usize>,
    /// Directory of per-epoch checkpoints (from train --keep-checkpoints)
    /// for the parameter-trajectory trace.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Also render an SVG next to each CSV.
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PhiArgs {
    #[arg(long)]
    min: Option<f64>,
    #[arg(long)]
    max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// Equilibrium solve tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Phi(args) => cmd_phi(args),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let toy = cfg.pick_switch(args.toy, "toy")?;
    if !toy {
        return Err(CliError::usage(
            "only the toy random-walk generator exists; pass --toy",
        ));
    }
    let n = cfg.pick(args.n, "n", 10_000)?;
    let t = cfg.pick(args.t, "T", 100)?;
    let sigma0 = cfg.pick(args.sigma0, "sigma0", 0.1)?;
    let sigma1 = cfg.pick(args.sigma1, "sigma1", 1.0)?;
    let seed = cfg.pick(args.seed, "seed", 0)?;
    let out: PathBuf = cfg.pick_required(args.out, "out")?;

    let ds = gen_random_walks(n, t, sigma0, sigma1, seed)?;
    write_csv_file(&ds, &out)?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "generator=toy-random-walk");
    let _ = writeln!(manifest, "seed={seed}");
    let _ = writeln!(manifest, "sigma0={sigma0}");
    let _ = writeln!(manifest, "sigma1={sigma1}");
    let _ = writeln!(manifest, "T={t}");
    let _ = writeln!(manifest, "n_per_class={n}");
    let _ = writeln!(manifest, "samples={}", ds.len());
    let _ = writeln!(manifest, "feature_dim={}", ds.feature_dim());
    let _ = writeln!(manifest, "class_count={}", ds.class_count());
    let manifest_path = manifest_path(&out);
    std::fs::write(&manifest_path, manifest)?;

    println!(
        "wrote {} walks (T={}, d=2) to {} and manifest to {}",
        ds.len(),
        t,
        out.display(),
        manifest_path.display()
    );
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    out.with_file_name(name)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    // Resolve and validate all settings before touching data files.
    let cell = args
        .cell
        .map(|c| c.0)
        .or_else(|| {
            cfg.get::<CellArg>("cell")
                .ok()
                .flatten()
                .map(|c| c.0)
        })
        .unwrap_or(CellKind::ErnnExemplar);
    let k = cfg.pick(args.k, "K", 1)?;
    let hidden = cfg.pick(args.hidden, "hidden", 10)?;
    let activation = args
        .activation
        .map(|a| a.0)
        .or_else(|| cfg.get::<ActArg>("activation").ok().flatten().map(|a| a.0))
        .unwrap_or_else(|| cell.default_activation());
    let lr = cfg.pick(args.lr, "lr", 1e-2)?;
    let batch = cfg.pick(args.batch, "batch", 128)?;
    let epochs = cfg.pick(args.epochs, "epochs", 100)?;
    let half_period = cfg.pick(args.half_period, "half-period", 50)?;
    let seed = cfg.pick(args.seed, "seed", 0)?;
    let eta0 = cfg.pick(args.eta0, "eta0", 1e-2)?;
    let clip = cfg.pick_opt(args.clip, "clip")?;
    let holdout = cfg.pick_opt(args.holdout_frac, "holdout-frac")?;
    let eval_path: Option<PathBuf> = cfg.pick_opt(args.eval, "eval")?;
    let data_path: PathBuf = cfg.pick_required(args.data, "data")?;
    let out: PathBuf = cfg.pick_required(args.out, "out")?;
    let records_path = cfg
        .pick_opt(args.records, "records")?
        .unwrap_or_else(|| out.with_extension("records.csv"));
    let keep_dir: Option<PathBuf> = cfg.pick_opt(args.keep_checkpoints, "keep-checkpoints")?;

    if cell == CellKind::FastRnn && k != 1 {
        return Err(CliError::usage("--cell fastrnn requires --K 1"));
    }
    if cell == CellKind::VanillaRnn && k != 1 {
        return Err(CliError::usage("--cell rnn has no inner steps; use --K 1"));
    }
    if eval_path.is_some() && holdout.is_some() {
        return Err(CliError::usage(
            "--eval and --holdout-frac are mutually exclusive",
        ));
    }
    if let Some(f) = holdout {
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::usage("--holdout-frac must lie strictly in (0, 1)"));
        }
    }
    let train_config = TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        epochs,
        lr_half_period: half_period,
        seed,
        grad_clip_norm: clip,
        keep_checkpoints: keep_dir.is_some(),
        ..TrainConfig::default()
    };
    train_config.validate()?;

    let full = load_csv_file(&data_path)?;
    let (train_set, eval_set): (SequenceDataset, SequenceDataset) = match (&eval_path, holdout) {
        (Some(path), _) => (full, load_csv_file(path)?),
        (None, Some(frac)) => split(&full, 1.0 - frac, seed)?,
        (None, None) => (full.clone(), full),
    };

    let model_cfg = ModelConfig {
        cell_kind: cell,
        activation,
        hidden_dim: hidden,
        input_dim: train_set.feature_dim(),
        seq_len: train_set.seq_len(),
        inner_steps: k,
        class_count: train_set.class_count(),
        eta_init: eta0,
        seed,
    };
    let params = ErnnParams::init(&model_cfg)?;
    let outcome = train(params, &train_set, &eval_set, &train_config)?;

    save_checkpoint_file(&outcome.params, &out)?;
    let mut records_buf = Vec::new();
    write_records_csv(&outcome.records, &mut records_buf)?;
    std::fs::write(&records_path, records_buf)?;

    if let Some(dir) = &keep_dir {
        std::fs::create_dir_all(dir)?;
        for i in 0..outcome.checkpoints.len() {
            let snapshot = outcome.checkpoints.get(i)?;
            save_checkpoint_file(&snapshot, &dir.join(format!("epoch_{:04}.ckpt", i + 1)))?;
        }
    }

    let (core, eta_count) = outcome.params.parameter_counts();
    println!(
        "trained cell={} K={} hidden={} epochs={} ({} params + {} etas)",
        cell.name(),
        k,
        hidden,
        epochs,
        core,
        eta_count
    );
    if let Some(last) = outcome.records.last() {
        println!(
            "final train_loss={:.6} eval_acc={:.6}",
            last.train_loss, last.test_acc
        );
    }
    println!("checkpoint written to {}", out.display());
    println!("records written to {}", records_path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let ckpt: PathBuf = cfg.pick_required(args.ckpt, "ckpt")?;
    let data: PathBuf = cfg.pick_required(args.data, "data")?;
    let params = load_checkpoint_file(&ckpt)?;
    let ds = load_csv_file(&data)?;
    ernn::cells::check_compatible(&params, ds.seq_len(), ds.feature_dim(), ds.class_count())?;
    println!("accuracy {:.6}", evaluate(&params, &ds));
    Ok(())
}

fn write_svg(path: &Path, content: String) -> Result<(), CliError> {
    std::fs::write(path, content)?;
    Ok(())
}

fn eta_series(report: &EtaReport, k_steps: usize) -> Vec<Series> {
    (1..=k_steps)
        .map(|k| Series {
            name: format!("eta k={k}"),
            points: report
                .rows
                .iter()
                .filter(|(_, rk, _)| *rk == k)
                .map(|(t, _, v)| (*t as f64, *v))
                .collect(),
        })
        .collect()
}

fn contraction_series(rows: &[ContractionRow], k_steps: usize) -> Vec<Series> {
    let mut series = Vec::new();
    for k in 1..=k_steps {
        for (label, pick) in [
            ("min", 0usize),
            ("mean", 1),
            ("max", 2),
        ] {
            series.push(Series {
                name: if k_steps > 1 {
                    format!("{label} k={k}")
                } else {
                    label.to_string()
                },
                points: rows
                    .iter()
                    .filter(|r| r.k == k)
                    .map(|r| {
                        let v = match pick {
                            0 => r.min,
                            1 => r.mean,
                            _ => r.max,
                        };
                        (r.t as f64, v)
                    })
                    .collect(),
            });
        }
    }
    series
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let ckpt: PathBuf = cfg.pick_required(args.ckpt, "ckpt")?;
    let data: PathBuf = cfg.pick_required(args.data, "data")?;
    let out_dir = cfg.pick(args.out_dir, "out-dir", PathBuf::from("."))?;
    let samples = cfg.pick(args.samples, "samples", 16)?;
    let ckpt_dir: Option<PathBuf> = cfg.pick_opt(args.checkpoints, "checkpoints")?;
    let want_svg = cfg.pick_switch(args.svg, "svg")?;

    std::fs::create_dir_all(&out_dir)?;
    let params = load_checkpoint_file(&ckpt)?;
    let ds = load_csv_file(&data)?;

    // H2: per-timestep intra/inter class distance ratio.
    let h2 = discriminability_trace(&params, &ds)?;
    let mut buf = Vec::new();
    write_h2_csv(&h2, &mut buf)?;
    std::fs::write(out_dir.join("h2_trace.csv"), &buf)?;
    if want_svg {
        write_svg(
            &out_dir.join("h2_trace.svg"),
            line_chart(
                "intra/inter class distance ratio",
                "t",
                "ratio",
                &[Series {
                    name: "ratio".into(),
                    points: h2.iter().enumerate().map(|(t, r)| ((t + 1) as f64, *r)).collect(),
                }],
            ),
        )?;
    }

    // Learned eta table with trend lines.
    let report = eta_report(&params);
    let mut buf = Vec::new();
    write_eta_csv(&report, &mut buf)?;
    std::fs::write(out_dir.join("eta.csv"), &buf)?;
    for (k, fit) in report.fits.iter().enumerate() {
        println!(
            "eta trend k={}: slope={:.6e} intercept={:.6e}",
            k + 1,
            fit.slope,
            fit.intercept
        );
    }
    if want_svg {
        write_svg(
            &out_dir.join("eta.svg"),
            line_chart(
                "learned step sizes",
                "t",
                "eta",
                &eta_series(&report, params.inner_steps()),
            ),
        )?;
    }

    // Contraction statistics (fixed-point cells only).
    if params.cell_kind != CellKind::VanillaRnn {
        let rows = contraction_report(&params, &ds, samples)?;
        let mut buf = Vec::new();
        write_contraction_csv(&rows, &mut buf)?;
        std::fs::write(out_dir.join("contraction.csv"), &buf)?;
        let below: usize = rows.iter().filter(|r| r.frac_lt_1 == 1.0).count();
        println!(
            "contraction: {}/{} (t,k) cells have every sampled norm < 1",
            below,
            rows.len()
        );
        if want_svg {
            write_svg(
                &out_dir.join("contraction.svg"),
                line_chart(
                    "contraction norms of the inner step",
                    "t",
                    "|I + eta J|",
                    &contraction_series(&rows, params.inner_steps()),
                ),
            )?;
        }
    } else {
        eprintln!("note: contraction report skipped (vanilla rnn has no inner fixed point)");
    }

    // H1: parameter trajectory distance, when a checkpoint archive exists.
    if let Some(dir) = ckpt_dir {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
            .collect();
        paths.sort();
        if paths.len() < 2 {
            return Err(CliError::data(format!(
                "checkpoint directory {} holds {} checkpoints; need at least 2",
                dir.display(),
                paths.len()
            )));
        }
        let mut history = Vec::with_capacity(paths.len());
        for p in &paths {
            history.push(load_checkpoint_file(p)?);
        }
        let h1 = model_distance_trace(&history)?;
        let mut buf = Vec::new();
        write_h1_csv(&h1, &mut buf)?;
        std::fs::write(out_dir.join("h1_trace.csv"), &buf)?;
        if want_svg {
            write_svg(
                &out_dir.join("h1_trace.svg"),
                line_chart(
                    "parameter distance to final epoch",
                    "epoch",
                    "distance",
                    &[Series {
                        name: "distance".into(),
                        points: h1
                            .iter()
                            .enumerate()
                            .map(|(e, d)| ((e + 1) as f64, *d))
                            .collect(),
                    }],
                ),
            )?;
        }
    }

    println!("diagnostics written to {}", out_dir.display());
    Ok(())
}

fn cmd_phi(args: PhiArgs) -> Result<(), CliError> {
    let cfg = FileConfig::load(args.config.as_deref())?;
    let lo = cfg.pick(args.min, "min", -3.0)?;
    let hi = cfg.pick(args.max, "max", 3.0)?;
    let points = cfg.pick(args.points, "points", 601)?;
    let tol = cfg.pick(args.tol, "tol", 1e-12)?;
    let out = cfg.pick(args.out, "out", PathBuf::from("phi.csv"))?;
    let want_svg = cfg.pick_switch(args.svg, "svg")?;

    let curve = phi_curve(lo, hi, points, tol)?;
    let mut buf = Vec::new();
    write_phi_csv(&curve, &mut buf)?;
    std::fs::write(&out, &buf)?;
    if want_svg {
        let svg_path = out.with_extension("svg");
        let series = vec![
            Series {
                name: "phi".into(),
                points: curve.iter().map(|p: &PhiPoint| (p.alpha, p.phi)).collect(),
            },
            Series {
                name: "dphi".into(),
                points: curve.iter().map(|p| (p.alpha, p.dphi)).collect(),
            },
        ];
        write_svg(
            &svg_path,
            line_chart("equilibrium of h = tanh(h + alpha)", "alpha", "value", &series),
        )?;
    }
    println!("wrote {} rows to {}", curve.len(), out.display());
    Ok(())
}
