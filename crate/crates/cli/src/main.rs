//! `srn`: matrix analysis, stable rank normalization, property suites, toy
//! training and empirical Lipschitz histograms from the command line.
//!
//! Exit codes: 0 success, 1 verification failure, 2 parse or data error,
//! 3 infeasible target, 4 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_distr::{Distribution, StandardNormal};
use srn_core::fmt::sig;
use srn_core::measures::{elhist, elhist_rows, LipHistogram};
use srn_core::nn::{load_csv, make_blobs, train, Dataset, MlpModel, NormMode, TrainConfig};
use srn_core::verify::{run_suite, Suite};
use srn_core::{
    frobenius_norm, matfile, numerical_rank, spectral_clip_counted, srn_greedy, srn_optimal,
    truncate_rank, DenseMatrix, Error, PowerOptions, SrnConfig,
};

const EXIT_VERIFY: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "srn", version, about = "Stable rank normalization toolkit")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Relative residual tolerance of the power iteration.
    #[arg(long, global = true, default_value_t = 1e-10)]
    tol: f64,
    /// Power iteration sweep limit.
    #[arg(long, global = true, default_value_t = 10_000)]
    max_iter: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Frobenius norm, spectral norm, stable rank and numerical rank.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Normalize a matrix and write the result.
    Normalize(NormalizeArgs),
    /// Run a seeded property suite.
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Train a small ReLU network and write its trace.
    Train(TrainArgs),
    /// Histogram of pairwise empirical Lipschitz ratios of a saved model.
    Elhist(ElhistArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum NormalizeMode {
    SrnOptimal,
    SrnGreedy,
    Sn,
    Clip,
    Truncate,
}

#[derive(Args, Debug)]
struct NormalizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: NormalizeMode,
    /// Target stable rank.
    #[arg(long, conflicts_with = "c")]
    r: Option<f64>,
    /// Target as a fraction of min(rows, cols).
    #[arg(long)]
    c: Option<f64>,
    /// Number of leading singular values to preserve.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Clip level.
    #[arg(long)]
    s: Option<f64>,
    /// Truncation rank.
    #[arg(long)]
    t: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TrainMode {
    Vanilla,
    Sn,
    Srn,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// CSV file (features then label) or `blobs:n,d,k,spread`.
    #[arg(long)]
    data: String,
    #[arg(long, value_enum, default_value_t = TrainMode::Vanilla)]
    mode: TrainMode,
    #[arg(long, default_value_t = 0.3)]
    c: f64,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    hidden: Vec<usize>,
    /// Fraction of the data held out for testing.
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    /// Train on uniformly random labels.
    #[arg(long)]
    shatter: bool,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Snapshot directory for the trained (normalized) network.
    #[arg(long)]
    save_model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ElhistArgs {
    /// Snapshot directory written by `train --save-model`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pairs: usize,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Draw pairs from the rows of this data set instead of N(0, I).
    #[arg(long)]
    data: Option<String>,
}

enum Failure {
    Lib(Error),
    Verify,
    Data(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible { .. } | Error::TargetNotBelowStableRank { .. } => EXIT_INFEASIBLE,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify) => ExitCode::from(EXIT_VERIFY),
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if !(cli.tol > 0.0) {
        return Err(Failure::Usage(format!(
            "--tol must be positive, got {}",
            cli.tol
        )));
    }
    let opts = PowerOptions {
        tol: cli.tol,
        max_iter: cli.max_iter,
        seed: cli.seed,
    };
    match cli.command {
        Command::Analyze { input } => analyze(&input, &opts),
        Command::Normalize(args) => normalize(&args, &opts),
        Command::Verify { suite, n } => verify(&suite, n, cli.seed, &opts),
        Command::Train(args) => train_cmd(&args, cli.seed),
        Command::Elhist(args) => elhist_cmd(&args, cli.seed),
    }
}

fn analyze(input: &Path, opts: &PowerOptions) -> Result<(), Failure> {
    let w = matfile::read(input)?;
    println!("{}", analyze_line(&w, opts)?);
    Ok(())
}

/// The `analyze` report for `w`.
fn analyze_line(w: &DenseMatrix, opts: &PowerOptions) -> Result<String, Error> {
    let frob = frobenius_norm(w);
    if frob == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let sigma1 = srn_core::linalg::spectral_norm(w, opts)?;
    let srank = (frob / sigma1).powi(2);
    Ok(format!(
        "frobenius={} sigma1={} srank={} rank_est={}",
        sig(frob, 12),
        sig(sigma1, 12),
        sig(srank, 12),
        numerical_rank(w, opts)?
    ))
}

struct Report {
    gamma1: f64,
    gamma2: f64,
    srank: f64,
    fro_dist: f64,
    l: usize,
}

fn normalize(args: &NormalizeArgs, opts: &PowerOptions) -> Result<(), Failure> {
    let w = matfile::read(&args.input)?;
    let (out, rep) = normalize_matrix(&w, args, opts)?;
    matfile::write(&args.out, &out)?;
    println!(
        "gamma1={} gamma2={} srank={} fro_dist={} l={}",
        sig(rep.gamma1, 12),
        sig(rep.gamma2, 12),
        sig(rep.srank, 12),
        sig(rep.fro_dist, 12),
        rep.l
    );
    Ok(())
}

fn target(args: &NormalizeArgs) -> Result<SrnConfig, Failure> {
    match (args.r, args.c) {
        (Some(r), None) => Ok(SrnConfig::with_rank(r, args.k)?),
        (None, Some(c)) => Ok(SrnConfig::with_ratio(c, args.k)?),
        _ => Err(Failure::Usage(
            "this mode needs exactly one of --r and --c".into(),
        )),
    }
}

fn normalize_matrix(
    w: &DenseMatrix,
    args: &NormalizeArgs,
    opts: &PowerOptions,
) -> Result<(DenseMatrix, Report), Failure> {
    let srank_of = |m: &DenseMatrix| srn_core::linalg::stable_rank_with(m, opts);
    let dist = |m: &DenseMatrix| frobenius_norm(&(w - m));
    match args.mode {
        NormalizeMode::SrnOptimal => {
            let cfg = target(args)?;
            let (out, rep) = srn_optimal(w, &cfg, opts)?;
            if !rep.feasible && rep.frobenius_distance == 0.0 {
                eprintln!("note: target is not below the stable rank; input returned unchanged");
            }
            if rep.degenerate_spectrum {
                eprintln!("note: preserved block ends inside a cluster of tied singular values");
            }
            let report = Report {
                gamma1: rep.gamma1,
                gamma2: rep.gamma2,
                srank: rep.achieved_srank,
                fro_dist: rep.frobenius_distance,
                l: rep.achieved_l,
            };
            Ok((out, report))
        }
        NormalizeMode::SrnGreedy => {
            let r = target(args)?.target_for(w);
            let (out, rep) = srn_greedy(w, r, args.k, opts)?;
            let report = Report {
                gamma1: rep.gamma1,
                gamma2: rep.gamma2,
                srank: rep.achieved_srank,
                fro_dist: rep.frobenius_distance,
                l: rep.achieved_l,
            };
            Ok((out, report))
        }
        NormalizeMode::Sn => {
            let gamma = 1.0 / srn_core::linalg::spectral_norm(w, opts)?;
            let out = w.scale(gamma);
            let report = Report {
                gamma1: gamma,
                gamma2: gamma,
                srank: srank_of(&out)?,
                fro_dist: dist(&out),
                l: 0,
            };
            Ok((out, report))
        }
        NormalizeMode::Clip => {
            let s = args
                .s
                .ok_or_else(|| Failure::Usage("clip mode needs --s".into()))?;
            let sigma1 = srn_core::linalg::spectral_norm(w, opts)?;
            let (out, clipped) = spectral_clip_counted(w, s, opts)?;
            let report = Report {
                gamma1: if clipped > 0 { s / sigma1 } else { 1.0 },
                gamma2: 1.0,
                srank: srank_of(&out)?,
                fro_dist: dist(&out),
                l: clipped,
            };
            Ok((out, report))
        }
        NormalizeMode::Truncate => {
            let t = args
                .t
                .ok_or_else(|| Failure::Usage("truncate mode needs --t".into()))?;
            let out = truncate_rank(w, t, opts)?;
            let report = Report {
                gamma1: 1.0,
                gamma2: 0.0,
                srank: srank_of(&out)?,
                fro_dist: dist(&out),
                l: t,
            };
            Ok((out, report))
        }
    }
}

fn verify(suite: &str, n: usize, seed: u64, opts: &PowerOptions) -> Result<(), Failure> {
    let suite = Suite::from_str(suite).map_err(|e| Failure::Usage(e.to_string()))?;
    if n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    let report = run_suite(suite, n, seed, opts)?;
    print!("{report}");
    if report.all_passed() {
        return Ok(());
    }
    if let Some(w) = &report.witness {
        let path = std::env::temp_dir().join(format!(
            "srn-witness-{}-{seed}-{}.srnmat",
            suite.name(),
            std::process::id()
        ));
        matfile::write(&path, w)?;
        println!("witness={}", path.display());
    }
    Err(Failure::Verify)
}

/// `blobs:n,d,k,spread` or a CSV path. Every failure is a data error.
fn load_data(spec: &str, seed: u64) -> Result<Dataset, Failure> {
    let data = match spec.strip_prefix("blobs:") {
        None => load_csv(spec),
        Some(params) => {
            let bad = || Failure::Data(format!("expected blobs:n,d,k,spread, got {spec:?}"));
            let parts: Vec<&str> = params.split(',').map(str::trim).collect();
            if parts.len() != 4 {
                return Err(bad());
            }
            let n: usize = parts[0].parse().map_err(|_| bad())?;
            let d: usize = parts[1].parse().map_err(|_| bad())?;
            let k: usize = parts[2].parse().map_err(|_| bad())?;
            let spread: f64 = parts[3].parse().map_err(|_| bad())?;
            make_blobs(n, d, k, spread, seed)
        }
    };
    data.map_err(|e| Failure::Data(e.to_string()))
}

fn train_cmd(args: &TrainArgs, seed: u64) -> Result<(), Failure> {
    let data = load_data(&args.data, seed)?;
    let (train_set, test_set) = data.split(args.holdout, seed)?;
    let mode = match args.mode {
        TrainMode::Vanilla => NormMode::Vanilla,
        TrainMode::Sn => NormMode::Spectral,
        TrainMode::Srn => NormMode::stable_rank(args.c)?,
    };
    let mut dims = vec![data.dim()];
    dims.extend(&args.hidden);
    dims.push(data.n_classes());
    let mut model = MlpModel::random_orthogonal(&dims, seed)?;
    let cfg = TrainConfig {
        mode,
        lr: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed,
        label_randomization: args.shatter,
        ..Default::default()
    };
    let trace = train(&mut model, &train_set, test_set.as_ref(), &cfg)?;
    if let Some(path) = &args.trace {
        trace.write_csv(path)?;
    }
    if let Some(dir) = &args.save_model {
        matfile::save_model(dir, &model.effective_model(mode)?)?;
    }
    let last = trace.last();
    println!(
        "train_acc={} test_acc={}",
        last.map_or_else(|| "nan".into(), |r| sig(r.train_acc, 12)),
        last.and_then(|r| r.test_acc)
            .map_or_else(|| "nan".into(), |a| sig(a, 12))
    );
    Ok(())
}

fn elhist_cmd(args: &ElhistArgs, seed: u64) -> Result<(), Failure> {
    let model = matfile::load_model(&args.model).map_err(|e| Failure::Data(e.to_string()))?;
    let hist: LipHistogram = match &args.data {
        Some(spec) => {
            let data = load_data(spec, seed)?;
            if data.dim() != model.input_dim() {
                return Err(Failure::Data(format!(
                    "model takes inputs of dimension {}, data has {}",
                    model.input_dim(),
                    data.dim()
                )));
            }
            elhist_rows(&model, data.inputs(), args.pairs, args.bins, seed)?
        }
        None => {
            let d = model.input_dim();
            let gauss = |rng: &mut srn_core::rng::SeededRng| {
                (0..d).map(|_| StandardNormal.sample(rng)).collect()
            };
            elhist(&model, gauss, gauss, args.pairs, args.bins, seed)?
        }
    };
    if let Some(path) = &args.out {
        hist.write_csv(path)?;
    }
    println!(
        "p90={} p95={} n={}",
        sig(hist.percentile_90, 12),
        sig(hist.percentile_95, 12),
        hist.n_pairs
    );
    Ok(())
}
